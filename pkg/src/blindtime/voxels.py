"""Point-cloud voxelization with per-voxel point groups, centroids and toy features."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

DESCRIPTOR_SIZE = 7


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=float).reshape(-1)
            if len(inten) != len(pts):
                raise ValueError("intensity length must match point count")
            object.__setattr__(self, "intensity", inten)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class VoxelConfig:
    range_min: tuple = (0.0, -75.2, -2.0)
    range_max: tuple = (75.2, 75.2, 4.0)
    voxel_size: tuple = (0.1, 0.1, 0.15)

    def __post_init__(self):
        lo, hi, vs = (np.asarray(v, dtype=float) for v in (self.range_min, self.range_max, self.voxel_size))
        if lo.shape != (3,) or hi.shape != (3,) or vs.shape != (3,):
            raise ValueError("voxel config vectors must have 3 components")
        if np.any(hi <= lo) or np.any(vs <= 0):
            raise ValueError("need range_max > range_min and voxel_size > 0")
        for name, v in (("range_min", lo), ("range_max", hi), ("voxel_size", vs)):
            object.__setattr__(self, name, tuple(float(c) for c in v))

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        ext = (np.array(self.range_max) - np.array(self.range_min)) / np.array(self.voxel_size)
        return tuple(int(n) for n in np.ceil(ext - 1e-9))

    def voxel_center(self, index) -> np.ndarray:
        return np.array(self.range_min) + (np.asarray(index, dtype=float) + 0.5) * np.array(self.voxel_size)

    def voxel_index(self, points) -> np.ndarray:
        return np.floor((np.asarray(points, float) - np.array(self.range_min)) / np.array(self.voxel_size)).astype(np.int64)


@dataclass(frozen=True)
class SparseVoxelGrid:
    """Non-empty voxels only, sorted lexicographically by index.

    Point groups are stored CSR style: the points of voxel ``k`` are
    ``point_order[offsets[k]:offsets[k + 1]]``.
    """

    config: VoxelConfig
    indices: np.ndarray          # (N_V, 3) int
    point_order: np.ndarray      # (n_in_range,) indices into the cloud
    offsets: np.ndarray          # (N_V + 1,)
    dropped: int = 0
    centroids: np.ndarray | None = None   # (N_V, 3)
    features: np.ndarray | None = None    # (N_V, C)
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def group(self, k: int) -> np.ndarray:
        return self.point_order[self.offsets[k]:self.offsets[k + 1]]

    def find(self, index) -> int | None:
        """Row of the voxel with 3D index ``index`` or None when empty."""
        if self._lookup is None:
            object.__setattr__(self, "_lookup", {tuple(int(c) for c in h): k for k, h in enumerate(self.indices)})
        return self._lookup.get(tuple(int(c) for c in index))


def voxelize(cloud: PointCloud, cfg: VoxelConfig) -> SparseVoxelGrid:
    """Group in-range points by ``floor((p - range_min) / voxel_size)``.

    The range is half-open, so points on ``range_max`` are dropped along with
    everything else outside it.
    """
    pts = cloud.points
    lo, hi = np.array(cfg.range_min), np.array(cfg.range_max)
    inside = np.all((pts >= lo) & (pts < hi), axis=1)
    dropped = int(len(pts) - inside.sum())
    if dropped:
        log.debug("voxelize dropped %d out-of-range points", dropped)
    keep = np.flatnonzero(inside)
    if len(keep) == 0:
        return SparseVoxelGrid(cfg, np.zeros((0, 3), np.int64), np.zeros(0, np.int64), np.zeros(1, np.int64), dropped)
    idx = cfg.voxel_index(pts[keep])
    # floor can land on the upper cell for values within rounding of range_max
    idx = np.minimum(idx, np.array(cfg.grid_shape) - 1)
    uniq, inverse = np.unique(idx, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    offsets = np.concatenate([[0], np.cumsum(np.bincount(inverse, minlength=len(uniq)))])
    return SparseVoxelGrid(cfg, uniq, keep[order], offsets, dropped)


def compute_centroids(grid: SparseVoxelGrid, cloud: PointCloud) -> SparseVoxelGrid:
    """Mean point position of every non-empty voxel."""
    counts = grid.counts
    if np.any(counts == 0):
        raise AssertionError("sparse voxel grid holds an empty group")
    owner = np.repeat(np.arange(len(grid)), counts)
    sums = np.zeros((len(grid), 3))
    np.add.at(sums, owner, cloud.points[grid.point_order])
    return replace(grid, centroids=sums / counts[:, None])


@dataclass(frozen=True)
class VoxelEncoder:
    """Linear map from the 7-long raw descriptor to ``C`` channels.

    Stands in for a pretrained sparse 3D backbone and is not trained here.
    """

    weight: np.ndarray  # (C, DESCRIPTOR_SIZE)
    count_scale: float = 10.0

    @property
    def channels(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def identity(cls, count_scale: float = 10.0) -> VoxelEncoder:
        return cls(np.eye(DESCRIPTOR_SIZE), count_scale)

    @classmethod
    def random(cls, channels: int = 16, seed: int = 0, count_scale: float = 10.0) -> VoxelEncoder:
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / np.sqrt(DESCRIPTOR_SIZE), size=(channels, DESCRIPTOR_SIZE)), count_scale)


def voxel_descriptors(grid: SparseVoxelGrid, cloud: PointCloud, count_scale: float = 10.0) -> np.ndarray:
    """Raw per-voxel descriptor ``(N_V, 7)``.

    Columns: centroid offset from voxel center (3, in voxel units), point
    count / ``count_scale`` (1), mean absolute point offset from the centroid
    (3, in voxel units).
    """
    if grid.centroids is None:
        raise ValueError("compute centroids first")
    cfg = grid.config
    vs = np.array(cfg.voxel_size)
    centers = np.array(cfg.range_min) + (grid.indices + 0.5) * vs
    counts = grid.counts
    owner = np.repeat(np.arange(len(grid)), counts)
    spread = np.zeros((len(grid), 3))
    np.add.at(spread, owner, np.abs(cloud.points[grid.point_order] - grid.centroids[owner]))
    spread /= counts[:, None]
    return np.hstack([(grid.centroids - centers) / vs, (counts / count_scale)[:, None], spread / vs])


def encode_voxel_features(grid: SparseVoxelGrid, cloud: PointCloud,
                          encoder: VoxelEncoder | None = None) -> SparseVoxelGrid:
    encoder = encoder or VoxelEncoder.identity()
    desc = voxel_descriptors(grid, cloud, encoder.count_scale)
    return replace(grid, features=desc @ encoder.weight.T)


def build_voxel_features(cloud: PointCloud, cfg: VoxelConfig, encoder: VoxelEncoder | None = None) -> SparseVoxelGrid:
    """voxelize -> centroids -> features in one call."""
    grid = voxelize(cloud, cfg)
    grid = compute_centroids(grid, cloud)
    return encode_voxel_features(grid, cloud, encoder)
