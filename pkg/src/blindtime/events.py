"""Event streams, half-open time slicing and the fixed-bin voxel-grid encoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import MlpParams, init_mlp, mlp_forward

DEFAULT_BINS = 5


@dataclass(frozen=True)
class EventStream:
    """Column-oriented event records sorted by timestamp.

    ``x`` is the pixel column, ``y`` the row, ``p`` the polarity (+1/-1).
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=np.int64).reshape(-1)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        p = np.asarray(self.p, dtype=np.int64).reshape(-1)
        if not (len(t) == len(x) == len(y) == len(p)):
            raise ValueError("event columns must have equal length")
        if len(t) and np.any(np.diff(t) < 0):
            raise ValueError("event stream must be sorted by timestamp")
        if np.any((p != 1) & (p != -1)):
            raise ValueError("polarity must be +1 or -1")
        if np.any(x < 0) or np.any(y < 0):
            raise ValueError("pixel coordinates must be nonnegative")
        for name, arr in zip("txyp", (t, x, y, p)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls) -> EventStream:
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))

    @classmethod
    def from_records(cls, records) -> EventStream:
        """Build from an iterable of ``(x, y, p, t)`` tuples."""
        arr = np.asarray(list(records), dtype=float).reshape(-1, 4)
        return cls(arr[:, 3], arr[:, 0], arr[:, 1], arr[:, 2])

    def __len__(self) -> int:
        return len(self.t)

    def subset(self, sl) -> EventStream:
        return EventStream(self.t[sl], self.x[sl], self.y[sl], self.p[sl])


def slice_events(stream: EventStream, t0: float, t: float) -> EventStream:
    """Events with ``t0 <= tau < t``; O(log n + k)."""
    if t < t0:
        raise ValueError(f"slice end {t!r} precedes start {t0!r}")
    lo = np.searchsorted(stream.t, t0, side="left")
    hi = np.searchsorted(stream.t, t, side="left")
    return stream.subset(slice(lo, hi))


@dataclass(frozen=True)
class EventVoxelGrid:
    data: np.ndarray  # (B, H, W)
    t_start: float
    t_end: float

    @property
    def bins(self) -> int:
        return self.data.shape[0]


def build_event_voxel_grid(events: EventStream, bins: int, height: int, width: int,
                           t0: float, t1: float) -> EventVoxelGrid:
    """Polarity-signed linear temporal kernel, exact pixel placement.

    Normalized time ``t* = (tau - t0) / (t1 - t0) * (B - 1)``; bin ``b`` gets
    ``p * max(0, 1 - |b - t*|)``.
    """
    if bins < 1:
        raise ValueError("need at least one bin")
    if not t1 > t0:
        raise ValueError(f"empty grid interval [{t0!r}, {t1!r})")
    ts, xs, ys, ps = events.t, events.x, events.y, events.p.astype(float)
    if len(ts) and (ts.min() < t0 or ts.max() >= t1):
        raise ValueError("event timestamps outside [t0, t1)")
    if len(ts) and (xs.max() >= width or ys.max() >= height):
        raise ValueError("event outside image bounds")

    grid = np.zeros(bins * height * width)
    tn = (ts - t0) / (t1 - t0) * (bins - 1)
    left = np.floor(tn).astype(np.int64)
    frac = tn - left
    pix = ys * width + xs
    for b, w in ((left, 1.0 - frac), (left + 1, frac)):
        ok = (b >= 0) & (b < bins) & (w != 0.0)
        np.add.at(grid, b[ok] * height * width + pix[ok], ps[ok] * w[ok])
    return EventVoxelGrid(grid.reshape(bins, height, width), float(t0), float(t1))


@dataclass(frozen=True)
class EventEncoder:
    """Toy stand-in for a pretrained event backbone.

    Average-pools the grid with ``stride`` then applies ``mlp`` per feature
    cell. ``mlp=None`` keeps the pooled bins as channels.
    """

    stride: int = 4
    mlp: MlpParams | None = None

    @property
    def channels(self) -> int | None:
        return None if self.mlp is None else self.mlp.out_features

    @classmethod
    def identity(cls) -> EventEncoder:
        return cls(stride=1, mlp=None)

    @classmethod
    def random(cls, bins: int = DEFAULT_BINS, channels: int = 16, stride: int = 4,
               hidden: int = 16, seed: int = 0) -> EventEncoder:
        rng = np.random.default_rng(seed)
        mlp = init_mlp([bins, hidden, channels], ["relu", "identity"], rng)
        return cls(stride=stride, mlp=mlp)


def average_pool(data: np.ndarray, stride: int) -> np.ndarray:
    """Mean over non-overlapping ``stride x stride`` windows of a (B, H, W) array."""
    B, H, W = data.shape
    if H % stride or W % stride:
        raise ValueError(f"image {H}x{W} not divisible by stride {stride}")
    return data.reshape(B, H // stride, stride, W // stride, stride).mean(axis=(2, 4))


def encode_event_features(grid: EventVoxelGrid, encoder: EventEncoder | None = None) -> np.ndarray:
    """Feature map of shape ``(H / stride, W / stride, C)``."""
    encoder = encoder or EventEncoder.identity()
    pooled = grid.data if encoder.stride == 1 else average_pool(grid.data, encoder.stride)
    fmap = np.moveaxis(pooled, 0, -1)
    if encoder.mlp is None:
        return np.ascontiguousarray(fmap)
    Hf, Wf, B = fmap.shape
    y, _ = mlp_forward(encoder.mlp, fmap.reshape(-1, B))
    return y.reshape(Hf, Wf, -1)
