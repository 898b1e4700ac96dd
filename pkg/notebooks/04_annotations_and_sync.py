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
# # Densifying labels and aligning LiDAR to image times
#
# Keyframe labels at 10 Hz are densified to 100 Hz: centers and sizes are
# interpolated linearly, yaw by quaternion SLERP. A LiDAR sweep is moved to an
# image timestamp with the interpolated sensor pose.

# %%
import numpy as np

from blindtime.annotations import (
    TimedPointCloud, TrackedAnnotation, filter_annotations, interpolate_annotations, sync_to_image_time,
)
from blindtime.boxes import Box3D
from blindtime.geometry import Pose, Quaternion
from blindtime.voxels import PointCloud

track = TrackedAnnotation("car-1", "vehicle", (
    (0.0, Box3D((10, 0, 0), (4.5, 1.9, 1.6), 0.0)),
    (0.1, Box3D((11, 0.5, 0), (4.5, 1.9, 1.6), 0.3)),
))
for lb in interpolate_annotations(track, subdivisions=10)[::3]:
    print(f"t={lb.t:.2f} center={np.round(lb.box.center, 3)} yaw={lb.box.yaw:.3f}")

# %% [markdown]
# ### Sync a sweep to an image taken in between
#
# A static wall seen from a sensor that drives forward at 10 m/s. After sync
# the cloud matches what the sensor would have seen at the image time.

# %%
rng = np.random.default_rng(0)
wall = np.column_stack([np.full(50, 20.0), rng.uniform(-5, 5, 50), rng.uniform(0, 3, 50)])


def seen_from(x):
    return wall - (x, 0, 0)


c0 = TimedPointCloud(PointCloud(seen_from(0.0)), 0.0, Pose((0.0, 0, 0), Quaternion()))
c1 = TimedPointCloud(PointCloud(seen_from(1.0)), 0.1, Pose((1.0, 0, 0), Quaternion()))
synced = sync_to_image_time(0.04, c0, c1)
print("max error vs truth:", np.abs(synced.points - seen_from(0.4)).max())
print("raw nearest sweep error:", np.abs(c0.cloud.points - seen_from(0.4)).max())

# %% [markdown]
# ### Filtering labels by support and range

# %%
dense = interpolate_annotations(track, 10)
cloud = PointCloud(rng.uniform((8, -2, -1), (13, 2, 1), (40, 3)))
kept = filter_annotations(dense, cloud, max_range=50.0, min_points=2)
print(len(dense), "labels,", len(kept), "kept")
