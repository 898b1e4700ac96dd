"""Virtual 3D event fusion and the blind-time motion/confidence heads.

Per proposal, the box is split into ``S x S x S`` cells. Voxel features and
event features sampled at the projected voxel centroids are mean-pooled per
cell, concatenated, and mapped by a per-cell fusion MLP to the implicit motion
field. Two heads read the flattened field: one regresses box-local motion
``(dx, dy, dz, dalpha)``, the other a logit for motion confidence.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import Box3D, BoxProposal, world_to_box_local
from .events import EventEncoder, EventStream, build_event_voxel_grid, encode_event_features, slice_events
from .geometry import CameraModel, project_points, wrap_angle
from .nn import MlpParams, init_mlp, logistic, mlp_forward
from .voxels import SparseVoxelGrid


@dataclass(frozen=True)
class MotionVector:
    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    dalpha: float = 0.0

    def __post_init__(self):
        vals = (self.dx, self.dy, self.dz, self.dalpha)
        if not np.all(np.isfinite(vals)):
            raise ValueError("motion must be finite")
        object.__setattr__(self, "dalpha", wrap_angle(self.dalpha))

    @classmethod
    def from_array(cls, a) -> MotionVector:
        return cls(*(float(v) for v in a))

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz, self.dalpha])

    @property
    def shift(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz])


def apply_motion(b0: Box3D, m: MotionVector) -> Box3D:
    """Shift by the box-local vector and rotate the heading; dims unchanged."""
    center = b0.center + b0.rotation() @ m.shift
    return Box3D(center, b0.dims, b0.yaw + m.dalpha)


def true_motion(b0: Box3D, bt: Box3D) -> MotionVector:
    """The motion that ``apply_motion`` needs to carry ``b0`` onto ``bt``."""
    shift = world_to_box_local(b0, bt.center)
    return MotionVector(*shift, wrap_angle(bt.yaw - b0.yaw))


def combine_score(p0: float, p_motion: float) -> float:
    if not (0.0 <= p0 <= 1.0 and 0.0 <= p_motion <= 1.0):
        raise ValueError(f"scores must lie in [0, 1], got {p0!r}, {p_motion!r}")
    return p0 * p_motion


# ---- virtual 3D event features --------------------------------------------

@dataclass(frozen=True)
class VirtualEventFeatures:
    features: np.ndarray  # (N, C), zero where invalid
    valid: np.ndarray     # (N,) bool


def bilinear_sample(fmap: np.ndarray, u, v) -> np.ndarray:
    """Sample an ``(H, W, C)`` map at continuous column ``u`` and row ``v``.

    Integer coordinates hit feature nodes exactly. Callers must keep
    ``0 <= u <= W - 1`` and ``0 <= v <= H - 1``.
    """
    H, W, _ = fmap.shape
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u0 = np.clip(np.floor(u).astype(np.int64), 0, max(W - 2, 0))
    v0 = np.clip(np.floor(v).astype(np.int64), 0, max(H - 2, 0))
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    fu = (u - u0)[..., None]
    fv = (v - v0)[..., None]
    top = fmap[v0, u0] * (1 - fu) + fmap[v0, u1] * fu
    bot = fmap[v1, u0] * (1 - fu) + fmap[v1, u1] * fu
    return top * (1 - fv) + bot * fv


def sample_event_features(points, cam: CameraModel, emap: np.ndarray, stride: int) -> VirtualEventFeatures:
    """Project 3D points and bilinearly gather event features at ``pixel / stride``."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    Hf, Wf, C = emap.shape
    if len(points) == 0:
        return VirtualEventFeatures(np.zeros((0, C)), np.zeros(0, bool))
    uv, depth = project_points(cam, points)
    uf, vf = uv[:, 0] / stride, uv[:, 1] / stride
    with np.errstate(invalid="ignore"):
        valid = (depth > 1e-6) & (uf >= 0) & (uf <= Wf - 1) & (vf >= 0) & (vf <= Hf - 1)
    feats = np.zeros((len(points), C))
    if valid.any():
        feats[valid] = bilinear_sample(emap, uf[valid], vf[valid])
    return VirtualEventFeatures(feats, valid)


def gather_virtual_event_features(grid: SparseVoxelGrid, cam: CameraModel, emap: np.ndarray,
                                  stride: int = 1) -> VirtualEventFeatures:
    """One row per non-empty voxel, sampled at the voxel's point centroid."""
    if grid.centroids is None:
        raise ValueError("grid has no centroids")
    return sample_event_features(grid.centroids, cam, emap, stride)


# ---- RoI grid pooling -----------------------------------------------------

def cell_assignment(box: Box3D, points, S: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``points`` inside ``box`` and their flat cell ids.

    Cell ``(ix, iy, iz)`` flattens to ``ix * S * S + iy * S + iz``; bounds are
    inclusive on both faces, points on the far face go to the last cell.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    frac = world_to_box_local(box, points) / box.dims + 0.5
    inside = np.all((frac >= 0.0) & (frac <= 1.0), axis=1)
    rows = np.flatnonzero(inside)
    ijk = np.minimum(np.floor(frac[rows] * S).astype(np.int64), S - 1)
    return rows, ijk[:, 0] * S * S + ijk[:, 1] * S + ijk[:, 2]


def _mean_pool(values: np.ndarray, cells: np.ndarray, n_cells: int) -> tuple[np.ndarray, np.ndarray]:
    out = np.zeros((n_cells, values.shape[1]))
    counts = np.bincount(cells, minlength=n_cells)
    np.add.at(out, cells, values)
    nz = counts > 0
    out[nz] /= counts[nz, None]
    return out, counts


@dataclass(frozen=True)
class RoiGridFeatures:
    event: np.ndarray         # (n, S^3, C)
    voxel: np.ndarray         # (n, S^3, C)
    event_counts: np.ndarray  # (n, S^3)
    voxel_counts: np.ndarray  # (n, S^3)
    S: int

    @property
    def empty(self) -> np.ndarray:
        return self.voxel_counts == 0

    def concatenated(self) -> np.ndarray:
        return np.concatenate([self.event, self.voxel], axis=-1)


def roi_grid_pool(proposals, grid: SparseVoxelGrid, vef: VirtualEventFeatures, S: int = 6) -> RoiGridFeatures:
    """Mean-pool both branches into each proposal's ``S^3`` cells.

    A voxel joins the cell containing its centroid; the event branch only
    averages rows flagged valid.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    n_cells = S ** 3
    C_e = vef.features.shape[1]
    C_v = grid.features.shape[1]
    ev = np.zeros((len(proposals), n_cells, C_e))
    vx = np.zeros((len(proposals), n_cells, C_v))
    ec = np.zeros((len(proposals), n_cells), np.int64)
    vc = np.zeros((len(proposals), n_cells), np.int64)
    for i, prop in enumerate(proposals):
        box = prop.box if isinstance(prop, BoxProposal) else prop
        rows, cells = cell_assignment(box, grid.centroids, S)
        vx[i], vc[i] = _mean_pool(grid.features[rows], cells, n_cells)
        ok = vef.valid[rows]
        ev[i], ec[i] = _mean_pool(vef.features[rows[ok]], cells[ok], n_cells)
    return RoiGridFeatures(ev, vx, ec, vc, S)


# ---- heads ----------------------------------------------------------------

def fuse_motion_field(roi: RoiGridFeatures, fusion_mlp: MlpParams) -> np.ndarray:
    """Per-cell MLP on ``concat(event, voxel)``; returns ``(n, S^3, F)``."""
    x = roi.concatenated()
    n, cells, width = x.shape
    if width != fusion_mlp.in_features:
        raise ValueError(f"fusion MLP expects width {fusion_mlp.in_features}, got {width}")
    y, _ = mlp_forward(fusion_mlp, x.reshape(n * cells, width))
    return y.reshape(n, cells, -1)


def flatten_field(field_: np.ndarray) -> np.ndarray:
    return field_.reshape(field_.shape[0], -1)


def predict_motion(field_: np.ndarray, motion_mlp: MlpParams) -> list[MotionVector]:
    out, _ = mlp_forward(motion_mlp, flatten_field(field_))
    return [MotionVector.from_array(row) for row in out]


def predict_confidence(field_: np.ndarray, conf_mlp: MlpParams) -> np.ndarray:
    logit, _ = mlp_forward(conf_mlp, flatten_field(field_))
    return logistic(logit[:, 0])


@dataclass(frozen=True)
class HeadParams:
    fusion: MlpParams
    motion: MlpParams
    confidence: MlpParams

    @classmethod
    def init(cls, channels: int = 16, S: int = 6, field_channels: int = 16,
             fusion_hidden: int = 32, head_hidden=(64, 64), seed: int = 0) -> HeadParams:
        rng = np.random.default_rng(seed)
        fusion = init_mlp([2 * channels, fusion_hidden, field_channels], ["relu", "relu"], rng)
        flat = S ** 3 * field_channels
        hidden = list(head_hidden)
        acts = ["relu"] * len(hidden) + ["identity"]
        motion = init_mlp([flat, *hidden, 4], acts, rng)
        conf = init_mlp([flat, *hidden, 1], acts, rng)
        # start from "no motion": the last motion layer begins at zero
        last = motion.layers[-1]
        motion = MlpParams(motion.layers[:-1] + (type(last)(np.zeros_like(last.weight), last.bias, last.activation),))
        return cls(fusion, motion, conf)

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for head in ("fusion", "motion", "confidence"):
            for j, arr in enumerate(getattr(self, head).tensors()):
                out[f"{head}.{j // 2}.{'weight' if j % 2 == 0 else 'bias'}"] = arr
        return out

    def with_named(self, tensors: dict[str, np.ndarray]) -> HeadParams:
        kw = {}
        for head in ("fusion", "motion", "confidence"):
            mlp = getattr(self, head)
            arrs = [tensors[f"{head}.{j // 2}.{'weight' if j % 2 == 0 else 'bias'}"] for j in range(2 * len(mlp.layers))]
            kw[head] = mlp.with_tensors(arrs)
        return HeadParams(**kw)

    def zeros_like(self) -> HeadParams:
        return HeadParams(self.fusion.zeros_like(), self.motion.zeros_like(), self.confidence.zeros_like())


@dataclass(frozen=True)
class BlindTimeModel:
    """Everything needed to run the blind-time detector at inference."""

    heads: HeadParams
    event_encoder: EventEncoder = field(default_factory=EventEncoder.identity)
    S: int = 6
    bins: int = 5
    nonempty_mask: bool = True


# ---- per-frame context ----------------------------------------------------

class ActiveFrame:
    """State computed once at the active timestamp and reused for every t.

    Holds the proposals, the voxel features, the per-proposal cell
    assignment and the pooled voxel branch. Only the event branch changes
    with the queried blind time.
    """

    def __init__(self, proposals, grid: SparseVoxelGrid, cam: CameraModel, S: int = 6,
                 nonempty_mask: bool = True):
        if grid.centroids is None or grid.features is None:
            raise ValueError("grid needs centroids and features")
        self.proposals = list(proposals)
        self.grid = grid
        self.cam = cam
        self.S = S
        self.nonempty_mask = nonempty_mask
        n_cells = S ** 3
        self._assign = []
        vx = np.zeros((len(self.proposals), n_cells, grid.features.shape[1]))
        vc = np.zeros((len(self.proposals), n_cells), np.int64)
        for i, prop in enumerate(self.proposals):
            rows, cells = cell_assignment(prop.box, grid.centroids, S)
            vx[i], vc[i] = _mean_pool(grid.features[rows], cells, n_cells)
            if nonempty_mask:
                self._assign.append((grid.centroids[rows], cells))
            else:
                centers = _dense_voxel_centers(prop.box, grid)
                self._assign.append(cell_assignment_points(prop.box, centers, S))
        self.voxel_branch = vx
        self.voxel_counts = vc

    def event_feature_map(self, events: EventStream, t: float, bins: int, encoder: EventEncoder) -> np.ndarray:
        ev = slice_events(events, 0.0, t)
        grid = build_event_voxel_grid(ev, bins, self.cam.height, self.cam.width, 0.0, t)
        return encode_event_features(grid, encoder)

    def pool(self, emap: np.ndarray, stride: int) -> RoiGridFeatures:
        n_cells = self.S ** 3
        C = emap.shape[2]
        ev = np.zeros((len(self.proposals), n_cells, C))
        ec = np.zeros((len(self.proposals), n_cells), np.int64)
        for i, (pts, cells) in enumerate(self._assign):
            vef = sample_event_features(pts, self.cam, emap, stride)
            ev[i], ec[i] = _mean_pool(vef.features[vef.valid], cells[vef.valid], n_cells)
        return RoiGridFeatures(ev, self.voxel_branch, ec, self.voxel_counts, self.S)

    def roi_features(self, events: EventStream, t: float, model: BlindTimeModel) -> RoiGridFeatures:
        emap = self.event_feature_map(events, t, model.bins, model.event_encoder)
        return self.pool(emap, model.event_encoder.stride)

    def detect(self, events: EventStream, model: BlindTimeModel, t: float) -> list[BoxProposal]:
        if not 0.0 <= t < 1.0:
            raise ValueError(f"blind time must lie in [0, 1), got {t!r}")
        if t == 0.0 or not self.proposals:
            return list(self.proposals)
        roi = self.roi_features(events, t, model)
        field_ = fuse_motion_field(roi, model.heads.fusion)
        motions = predict_motion(field_, model.heads.motion)
        conf = predict_confidence(field_, model.heads.confidence)
        return [
            BoxProposal(apply_motion(p.box, m), p.class_id, combine_score(p.score, float(c)), p.track_id)
            for p, m, c in zip(self.proposals, motions, conf)
        ]


def cell_assignment_points(box: Box3D, points, S: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cells = cell_assignment(box, points, S)
    return np.asarray(points)[rows], cells


def _dense_voxel_centers(box: Box3D, grid: SparseVoxelGrid) -> np.ndarray:
    """Centers of every grid voxel, empty or not, whose center lies in ``box``."""
    cfg = grid.config
    corners = box.center + np.abs(box.rotation()) @ (box.dims / 2.0) * np.array([[-1.0], [1.0]])
    lo = np.maximum(cfg.voxel_index(corners[0]), 0)
    hi = np.minimum(cfg.voxel_index(corners[1]), np.array(cfg.grid_shape) - 1)
    if np.any(hi < lo):
        return np.zeros((0, 3))
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = np.array(cfg.range_min) + (idx + 0.5) * np.array(cfg.voxel_size)
    return centers[np.all(np.abs(world_to_box_local(box, centers)) <= box.dims / 2.0, axis=1)]


def blind_time_detect(proposals, grid: SparseVoxelGrid, events: EventStream, cam: CameraModel,
                      model: BlindTimeModel, t: float) -> list[BoxProposal]:
    """Boxes and scores at blind time ``t``; ``t = 0`` returns the proposals."""
    frame = ActiveFrame(proposals, grid, cam, model.S, model.nonempty_mask)
    return frame.detect(events, model, t)
