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
# # Detecting boxes between LiDAR frames
#
# Proposals come from the frame at t = 0. For a blind time t in (0, 1), the
# events in [0, t) are gathered at each voxel centroid, pooled per box on an
# S x S x S grid together with the voxel features, and decoded into a box
# motion (dx, dy, dz, dalpha) plus a confidence. The voxel branch is computed
# once per frame and reused for every t.
#
# This script trains the heads briefly on the synthetic scene (a few hundred
# steps instead of 2000) and compares moved boxes with the static proposals.

# %%
import numpy as np

from blindtime.boxes import iou_3d
from blindtime.config import RunConfig
from blindtime.fusion import ActiveFrame
from blindtime.synthetic import GT_TIMES, generate
from blindtime.training import Trainer
from blindtime.voxels import build_voxel_features

cfg = RunConfig.load(seed=0)
scene = generate(cfg.scenario_spec())
model, venc = cfg.init_model()
grid = build_voxel_features(scene.cloud, cfg.voxel_config(), venc)
frame = ActiveFrame(scene.proposals, grid, scene.spec.camera, model.S)

# %% [markdown]
# ### Before training the motion head outputs zero, so boxes stay put

# %%
print([d.box == p.box for d, p in zip(frame.detect(scene.events, model, 0.5), scene.proposals)])

# %%
trainer = Trainer(frame, scene.events, scene.gt_at, model, cfg.train_config(), times=GT_TIMES[1:])
print("loss before:", round(trainer.evaluate(), 4))
model = trainer.run(steps=400, log_every=0)
print("loss after 400 steps:", round(trainer.evaluate(), 4))

# %% [markdown]
# ### IoU with the ground truth over blind time

# %%
print(" t    static  moved")
for t in GT_TIMES[1:]:
    gt = [g.box for g in scene.gt_at(t)]
    moved = frame.detect(scene.events, model, t)
    s = np.mean([iou_3d(p.box, g) for p, g in zip(scene.proposals, gt)])
    m = np.mean([iou_3d(d.box, g) for d, g in zip(moved, gt)])
    print(f"{t:.1f}   {s:.3f}   {m:.3f}")
