"""Oriented 3D boxes, box-local frames, rotated IoU and greedy NMS."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import wrap_angle

CLASSES = ("vehicle", "pedestrian", "cyclist")
CLIP_EPS = 1e-9

# BEV corner signs, counter-clockwise starting at front-left
_BEV_SIGNS = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])


def _rot2(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True, eq=False)
class Box3D:
    """Yaw-rotated cuboid; local +x runs along ``length``."""

    center: np.ndarray
    dims: np.ndarray  # (length, width, height)
    yaw: float = 0.0

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(3)
        d = np.array(self.dims, dtype=float).reshape(3)
        if np.any(d <= 0):
            raise ValueError(f"box dims must be positive, got {d}")
        c.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "dims", d)
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def __eq__(self, other):
        if not isinstance(other, Box3D):
            return NotImplemented
        return (np.array_equal(self.center, other.center) and np.array_equal(self.dims, other.dims)
                and self.yaw == other.yaw)

    def __hash__(self):
        return hash((tuple(self.center), tuple(self.dims), self.yaw))

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    def rotation(self) -> np.ndarray:
        R = np.eye(3)
        R[:2, :2] = _rot2(self.yaw)
        return R

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "dims": self.dims.tolist(), "yaw": self.yaw}


@dataclass(frozen=True)
class BoxProposal:
    box: Box3D
    class_id: str = "vehicle"
    score: float = 1.0
    track_id: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.class_id not in CLASSES:
            raise ValueError(f"unknown class {self.class_id!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score!r}")


@dataclass(frozen=True)
class LabeledBox:
    """A box tagged with time and class; ground truth has ``score=None``."""

    t: float
    box: Box3D
    class_id: str
    score: float | None = None
    track_id: str | None = None

    def to_record(self) -> dict:
        rec = {"t": self.t, "class": self.class_id, **self.box.to_dict()}
        if self.score is not None:
            rec["score"] = self.score
        if self.track_id is not None:
            rec["track_id"] = self.track_id
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> LabeledBox:
        box = Box3D(rec["center"], rec["dims"], rec["yaw"])
        score = rec.get("score")
        return cls(float(rec["t"]), box, rec["class"], None if score is None else float(score), rec.get("track_id"))

    def as_proposal(self) -> BoxProposal:
        return BoxProposal(self.box, self.class_id, 1.0 if self.score is None else self.score, self.track_id)


def box_corners(b: Box3D) -> np.ndarray:
    """``(8, 3)`` corners: bottom face 0-3 then top face 4-7.

    Each face runs counter-clockwise seen from above, starting at the
    front-left corner ``(+l/2, +w/2)``.
    """
    half = b.dims / 2.0
    local = np.array([[sx * half[0], sy * half[1], sz * half[2]]
                      for sz in (-1.0, 1.0) for sx, sy in _BEV_SIGNS])
    return box_local_to_world(b, local)


def bev_corners(b: Box3D) -> np.ndarray:
    """``(4, 2)`` counter-clockwise footprint."""
    local = _BEV_SIGNS * (b.dims[:2] / 2.0)
    return local @ _rot2(b.yaw).T + b.center[:2]


def world_to_box_local(b: Box3D, p) -> np.ndarray:
    """``R(-yaw) (p - center)`` for a point or ``(N, 3)`` array."""
    p = np.asarray(p, dtype=float)
    return (p - b.center) @ b.rotation()


def box_local_to_world(b: Box3D, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q @ b.rotation().T + b.center


def points_in_box(b: Box3D, points, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside the box, bounds inclusive."""
    local = world_to_box_local(b, np.atleast_2d(points))
    return np.all(np.abs(local) <= b.dims / 2.0 + margin, axis=1)


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by a CCW convex ``clipper``."""
    out = list(subject)
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        a, b = clipper[i], clipper[(i + 1) % n]
        edge = b - a

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        src, out = out, []
        for j in range(len(src)):
            cur, nxt = src[j], src[(j + 1) % len(src)]
            sc, sn = side(cur), side(nxt)
            if sc >= -CLIP_EPS:
                out.append(cur)
                if sn < -CLIP_EPS:
                    out.append(cur + (nxt - cur) * (sc / (sc - sn)))
            elif sn >= -CLIP_EPS:
                out.append(cur + (nxt - cur) * (sc / (sc - sn)))
    return np.array(out).reshape(-1, 2)


def bev_intersection(a: Box3D, b: Box3D) -> float:
    # cheap rejection on circumscribed circles
    ra = 0.5 * np.hypot(*a.dims[:2])
    rb = 0.5 * np.hypot(*b.dims[:2])
    if np.hypot(*(a.center[:2] - b.center[:2])) > ra + rb:
        return 0.0
    return max(0.0, _polygon_area(clip_convex(bev_corners(a), bev_corners(b))))


def iou_bev(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection(a, b)
    union = a.dims[0] * a.dims[1] + b.dims[0] * b.dims[1] - inter
    return float(np.clip(inter / union, 0.0, 1.0))


def iou_3d(a: Box3D, b: Box3D) -> float:
    za = (a.center[2] - a.dims[2] / 2, a.center[2] + a.dims[2] / 2)
    zb = (b.center[2] - b.dims[2] / 2, b.center[2] + b.dims[2] / 2)
    dz = min(za[1], zb[1]) - max(za[0], zb[0])
    if dz <= 0:
        return 0.0
    inter = bev_intersection(a, b) * dz
    union = a.volume + b.volume - inter
    return float(np.clip(inter / union, 0.0, 1.0))


def nms(proposals, iou_threshold: float = 0.1, per_class: bool = True) -> list[BoxProposal]:
    """Greedy suppression by 3D IoU, highest score first.

    Equal scores keep the lower input index first. A box is suppressed when
    its IoU with an already kept box exceeds ``iou_threshold``.
    """
    proposals = list(proposals)
    order = sorted(range(len(proposals)), key=lambda i: (-proposals[i].score, i))
    kept: list[int] = []
    for i in order:
        cand = proposals[i]
        if all(
            (per_class and proposals[k].class_id != cand.class_id)
            or iou_3d(proposals[k].box, cand.box) <= iou_threshold
            for k in kept
        ):
            kept.append(i)
    return [proposals[i] for i in kept]
