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
# # Event voxel grids and sparse LiDAR voxels
#
# Events are binned into B temporal slices with a linear (tent) kernel.
# LiDAR points are grouped into voxels; each non-empty voxel keeps the mean
# of its points as an anchor for projecting into the event plane.

# %%
import numpy as np

from blindtime.events import EventEncoder, EventStream, build_event_voxel_grid, encode_event_features, slice_events
from blindtime.synthetic import default_spec, generate
from blindtime.voxels import VoxelEncoder, build_voxel_features

scene = generate(default_spec(0))
print(len(scene.events), "events,", len(scene.cloud), "points")

# %% [markdown]
# ### A single event spreads over its two neighbouring bins

# %%
one = EventStream([0.3], [2], [1], [1])
g = build_event_voxel_grid(one, bins=5, height=4, width=4, t0=0.0, t1=1.0)
print("bin weights at pixel (2, 1):", g.data[:, 1, 2])

# %% [markdown]
# ### Grids over growing blind times
#
# Only events in [0, t) are used, so the grid at t = 0.3 cannot see anything later.

# %%
cam = scene.spec.camera
for t in (0.1, 0.3, 0.6, 0.9):
    ev = slice_events(scene.events, 0.0, t)
    grid = build_event_voxel_grid(ev, 5, cam.height, cam.width, 0.0, t)
    print(f"t={t:.1f}: {len(ev):5d} events, |grid| sum {np.abs(grid.data).sum():8.1f}")

enc = EventEncoder.random(bins=5, channels=16, stride=4, seed=3)
fmap = encode_event_features(grid, enc)
print("event feature map:", fmap.shape)

# %% [markdown]
# ### Voxelization

# %%
vgrid = build_voxel_features(scene.cloud, scene.spec.voxel_config, VoxelEncoder.random(16, seed=1))
print(len(vgrid), "non-empty voxels; points per voxel: max", vgrid.counts.max(), "mean", round(vgrid.counts.mean(), 2))
k = int(np.argmax(vgrid.counts))
members = scene.cloud.points[vgrid.group(k)]
print("centroid", vgrid.centroids[k], "equals member mean", members.mean(axis=0))
