"""Losses, head forward/backward and the training loop for the blind-time heads."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .boxes import Box3D, iou_3d
from .fusion import ActiveFrame, BlindTimeModel, HeadParams, MotionVector, RoiGridFeatures, apply_motion
from .geometry import wrap_angle
from .nn import Adam, LossWeights, iou_target, logistic, mlp_backward, mlp_forward, score_loss, smooth_l1

log = logging.getLogger(__name__)


def reg_loss(box0: Box3D, motion, gt: Box3D, beta: float = 1.0) -> tuple[float, np.ndarray]:
    """Smooth-L1 box regression loss and its gradient w.r.t. ``(dx, dy, dz, dalpha)``.

    Residual: world-frame center error (3), dims error (3, constant since dims
    are not predicted), and ``(sin d, cos d - 1)`` of the heading error ``d``.
    """
    m = np.asarray(motion.as_array() if isinstance(motion, MotionVector) else motion, dtype=float)
    R = box0.rotation()
    center = box0.center + R @ m[:3]
    dyaw = box0.yaw + m[3] - gt.yaw
    r = np.concatenate([center - gt.center, box0.dims - gt.dims, [np.sin(dyaw), np.cos(dyaw) - 1.0]])
    val, g = smooth_l1(r, beta)
    grad = np.zeros(4)
    grad[:3] = R.T @ g[:3]
    grad[3] = g[6] * np.cos(dyaw) - g[7] * np.sin(dyaw)
    return float(val.sum()), grad


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    times_per_step: int = 3
    theta_low: float = 0.25
    theta_high: float = 0.75
    weights: LossWeights = field(default_factory=LossWeights)
    smooth_l1_beta: float = 1.0
    seed: int = 0
    t_min: float = 0.05


def heads_forward(heads: HeadParams, x: np.ndarray):
    """``x``: ``(n, S^3, 2C)`` pooled features. Returns motions, logits and caches."""
    n, cells, width = x.shape
    field_, c_fuse = mlp_forward(heads.fusion, x.reshape(n * cells, width))
    flat = field_.reshape(n, -1)
    motion, c_motion = mlp_forward(heads.motion, flat)
    logit, c_conf = mlp_forward(heads.confidence, flat)
    return motion, logit[:, 0], (c_fuse, c_motion, c_conf, field_.shape)


def heads_backward(heads: HeadParams, caches, d_motion: np.ndarray, d_logit: np.ndarray) -> HeadParams:
    c_fuse, c_motion, c_conf, field_shape = caches
    g_motion, dflat_m = mlp_backward(heads.motion, c_motion, d_motion)
    g_conf, dflat_c = mlp_backward(heads.confidence, c_conf, d_logit[:, None])
    dfield = (dflat_m + dflat_c).reshape(field_shape)
    g_fuse, _ = mlp_backward(heads.fusion, c_fuse, dfield)
    return HeadParams(g_fuse, g_motion, g_conf)


def score_targets(box0s, motions: np.ndarray, gts, theta_low: float, theta_high: float) -> np.ndarray:
    return np.array([
        iou_target(iou_3d(apply_motion(b, MotionVector.from_array(m)), g), theta_low, theta_high)
        for b, m, g in zip(box0s, motions, gts)
    ])


def head_loss(heads: HeadParams, x: np.ndarray, box0s, gts, cfg: TrainConfig,
              targets: np.ndarray | None = None, with_grad: bool = True):
    """Mean over proposals of ``reg_w * L_reg + score_w * L_score``.

    Confidence targets come from the IoU of the current prediction and are
    treated as constants; pass ``targets`` to freeze them explicitly.
    Returns ``(loss, grads or None, targets)``.
    """
    motion, logit, caches = heads_forward(heads, x)
    n = len(box0s)
    if targets is None:
        targets = score_targets(box0s, motion, gts, cfg.theta_low, cfg.theta_high)
    lam = cfg.weights
    total = 0.0
    d_motion = np.zeros_like(motion)
    d_logit = np.zeros(n)
    p = logistic(logit)
    for i in range(n):
        lr, gr = reg_loss(box0s[i], motion[i], gts[i], cfg.smooth_l1_beta)
        ls, gs = score_loss(p[i], targets[i])
        total += lam.reg * lr + lam.score * ls
        d_motion[i] = lam.reg * gr / n
        d_logit[i] = lam.score * gs * p[i] * (1.0 - p[i]) / n
    loss = total / n
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss!r}; motions={motion.tolist()} logits={logit.tolist()}")
    grads = heads_backward(heads, caches, d_motion, d_logit) if with_grad else None
    return loss, grads, targets


@dataclass
class TrainingSample:
    x: np.ndarray   # (n, S^3, 2C)
    box0s: list
    gts: list


def stack_samples(samples) -> TrainingSample:
    return TrainingSample(
        np.concatenate([s.x for s in samples]),
        [b for s in samples for b in s.box0s],
        [g for s in samples for g in s.gts],
    )


def train_step(heads: HeadParams, batch: TrainingSample, cfg: TrainConfig, opt: Adam) -> tuple[HeadParams, float]:
    loss, grads, _ = head_loss(heads, batch.x, batch.box0s, batch.gts, cfg)
    new = opt.update(heads.named_tensors(), grads.named_tensors())
    return heads.with_named(new), loss


class Trainer:
    """Trains the heads of ``model`` on one scene with analytic ground truth.

    ``gt_fn(t)`` returns the ground-truth boxes at ``t`` aligned with the
    frame's proposals. With ``times`` given, each step draws blind times from
    that set (annotated times); otherwise uniformly from ``[t_min, 1)``.
    """

    def __init__(self, frame: ActiveFrame, events, gt_fn, model: BlindTimeModel, cfg: TrainConfig,
                 times=None):
        self.frame = frame
        self.events = events
        self.gt_fn = gt_fn
        self.model = model
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.opt = Adam(lr=cfg.lr)
        self.losses: list[float] = []
        self.times = None if times is None else np.asarray(sorted(times), dtype=float)

    def sample(self, t: float) -> TrainingSample:
        roi: RoiGridFeatures = self.frame.roi_features(self.events, t, self.model)
        return TrainingSample(roi.concatenated(), [p.box for p in self.frame.proposals],
                              [g.box for g in self.gt_fn(t)])

    def evaluate(self, times=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)) -> float:
        batch = stack_samples([self.sample(t) for t in times])
        loss, _, _ = head_loss(self.model.heads, batch.x, batch.box0s, batch.gts, self.cfg, with_grad=False)
        return loss

    def step(self) -> float:
        if self.times is None:
            times = self.rng.uniform(self.cfg.t_min, 1.0, size=self.cfg.times_per_step)
        else:
            times = self.rng.choice(self.times, size=self.cfg.times_per_step)
        batch = stack_samples([self.sample(float(t)) for t in times])
        heads, loss = train_step(self.model.heads, batch, self.cfg, self.opt)
        self.model = BlindTimeModel(heads, self.model.event_encoder, self.model.S, self.model.bins,
                                    self.model.nonempty_mask)
        self.losses.append(loss)
        return loss

    def run(self, steps: int | None = None, log_every: int = 100) -> BlindTimeModel:
        for k in range(steps if steps is not None else self.cfg.steps):
            loss = self.step()
            if log_every and (k + 1) % log_every == 0:
                log.info("step %d loss %.5f", k + 1, loss)
        return self.model


def motion_errors(model: BlindTimeModel, frame: ActiveFrame, events, true_motions, t: float) -> np.ndarray:
    """Per-proposal norm of the box-local shift error at ``t``."""
    roi = frame.roi_features(events, t, model)
    motion, _, _ = heads_forward(model.heads, roi.concatenated())
    truth = np.array([m.as_array() for m in true_motions])
    return np.linalg.norm(motion[:, :3] - truth[:, :3], axis=1)


__all__ = [
    "TrainConfig", "Trainer", "TrainingSample", "head_loss", "heads_backward", "heads_forward",
    "motion_errors", "reg_loss", "score_targets", "train_step", "wrap_angle",
]
