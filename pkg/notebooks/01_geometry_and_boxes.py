# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3 (ipykernel)
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Rigid transforms, camera projection and rotated boxes
#
# Poses use unit quaternions stored as (w, x, y, z). A box is a center, a
# size (length, width, height) and a yaw about +z.

# %%
import numpy as np

from blindtime.boxes import Box3D, BoxProposal, box_corners, iou_3d, iou_bev, nms
from blindtime.geometry import Quaternion, forward_camera, pose_interpolate, Pose, project_points, slerp

# %% [markdown]
# ### Quaternions and interpolation
#
# Halfway between yaw 0 and yaw 90 degrees lies yaw 45 degrees.

# %%
q0 = Quaternion.from_yaw(0.0)
q1 = Quaternion.from_yaw(np.pi / 2)
mid = slerp(q0, q1, 0.5)
print("midpoint yaw (deg):", np.degrees(mid.yaw()))

p = pose_interpolate(Pose((0, 0, 0), q0), Pose((2, 0, 0), q1), 0.25)
print("pose at 1/4:", p.position, np.degrees(p.orientation.yaw()))

# %% [markdown]
# ### Projecting a box into the forward camera
#
# The camera looks along LiDAR +x. Corners behind the image plane come back as NaN.

# %%
cam = forward_camera(320, 240, 200.0)
box = Box3D((12.0, 1.5, -0.9), (4.5, 1.9, 1.6), 0.4)
uv, depth = project_points(cam, box_corners(box))
print(np.round(uv, 1))
print("depths:", np.round(depth, 2))

# %% [markdown]
# ### Rotated IoU
#
# A square against its 45 degree rotation has a closed form overlap.

# %%
a = Box3D((0, 0, 0), (2, 2, 1), 0.0)
b = Box3D((0, 0, 0), (2, 2, 1), np.pi / 4)
print("BEV IoU:", iou_bev(a, b), "closed form:", 1 / np.sqrt(2))
print("3D IoU with half the height shifted:", iou_3d(a, Box3D((0, 0, 0.5), (2, 2, 1), 0.0)))

# %% [markdown]
# ### Non-maximum suppression

# %%
rng = np.random.default_rng(0)
props = [BoxProposal(Box3D(box.center + rng.normal(0, 0.3, 3), box.dims, box.yaw + rng.normal(0, 0.05)),
                     "vehicle", float(s)) for s in rng.uniform(size=6)]
props.append(BoxProposal(Box3D((30, 0, -0.9), (4.5, 1.9, 1.6), 0.0), "vehicle", 0.2))
kept = nms(props, iou_threshold=0.1)
print(len(props), "proposals ->", len(kept), "kept; scores", [round(p.score, 3) for p in kept])
