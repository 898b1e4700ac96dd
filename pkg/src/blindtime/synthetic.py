"""Deterministic toy scenes with analytically known box motion.

Boxes move with constant velocity and yaw rate over one frame interval
``[0, 1)``. LiDAR points are sampled on the box surfaces at ``t = 0`` (and at
``t = 1`` for the next active frame). Events fire on the projected
silhouette of each moving box: polarity is +1 on edges whose outward normal
faces the image-plane motion and -1 otherwise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .boxes import Box3D, BoxProposal, box_corners, box_local_to_world
from .events import EventStream
from .fusion import MotionVector, true_motion
from .geometry import CameraModel, forward_camera, project_points
from .voxels import PointCloud, VoxelConfig

log = logging.getLogger(__name__)

GT_TIMES = tuple(round(0.1 * k, 10) for k in range(10))


@dataclass(frozen=True)
class MovingBox:
    box: Box3D
    velocity: tuple = (0.0, 0.0, 0.0)  # m per frame interval
    yaw_rate: float = 0.0              # rad per frame interval
    class_id: str = "vehicle"

    def at(self, t: float) -> Box3D:
        return Box3D(self.box.center + t * np.asarray(self.velocity, float), self.box.dims,
                     self.box.yaw + t * self.yaw_rate)

    def displacement(self) -> float:
        """Path length over one interval of the fastest corner, bounded by translation plus arc."""
        radius = 0.5 * float(np.hypot(*self.box.dims[:2]))
        return float(np.linalg.norm(self.velocity)) + abs(self.yaw_rate) * radius


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    boxes: tuple = ()
    points_per_box: int = 400
    events_per_unit_motion: float = 600.0
    camera: CameraModel = field(default_factory=forward_camera)
    point_jitter: float = 0.01
    event_pixel_jitter: float = 0.5
    proposal_noise: float = 0.0
    voxel_config: VoxelConfig = field(default_factory=VoxelConfig)
    gt_times: tuple = GT_TIMES

    def __post_init__(self):
        if self.points_per_box < 0 or self.events_per_unit_motion < 0:
            raise ValueError("counts must be nonnegative")


def default_boxes() -> tuple[MovingBox, ...]:
    """Three classes, fastest moving ~3 m per interval."""
    ground = -1.7
    return (
        MovingBox(Box3D((14.0, 3.0, ground + 0.8), (4.5, 1.9, 1.6), -1.23), (1.0, -2.8, 0.0), 0.0, "vehicle"),
        MovingBox(Box3D((9.0, -2.5, ground + 0.875), (0.8, 0.7, 1.75), np.pi / 2), (0.0, 1.2, 0.0), 0.0, "pedestrian"),
        MovingBox(Box3D((18.0, -6.0, ground + 0.85), (1.8, 0.7, 1.7), 2.36), (-1.5, 1.5, 0.0), 0.3, "cyclist"),
    )


def default_spec(seed: int = 0) -> ScenarioSpec:
    return ScenarioSpec(seed=seed, boxes=default_boxes())


@dataclass(frozen=True)
class Scenario:
    spec: ScenarioSpec
    cloud: PointCloud            # t = 0
    cloud_next: PointCloud       # t = 1, never needed online
    events: EventStream          # [0, 1)
    proposals: list              # BoxProposal at t = 0
    gt: list                     # (t, BoxProposal)

    def gt_at(self, t: float) -> list[BoxProposal]:
        return [p for s, p in self.gt if abs(s - t) < 1e-9]

    def gt_boxes(self, t: float) -> list[BoxProposal]:
        """Analytic ground truth at any ``t``, not just the annotated times."""
        return [BoxProposal(mb.at(t), mb.class_id, 1.0, f"obj{i}") for i, mb in enumerate(self.spec.boxes)]

    def motions(self, t: float) -> list[MotionVector]:
        return [true_motion(mb.box, mb.at(t)) for mb in self.spec.boxes]


def sample_surface_points(box: Box3D, n: int, rng: np.random.Generator) -> np.ndarray:
    l, w, h = box.dims
    areas = np.array([w * h, w * h, l * h, l * h, l * w, l * w])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    local = np.zeros((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 0.5, -0.5)
    for a in range(3):
        sel = axis == a
        others = [k for k in range(3) if k != a]
        local[sel, a] = sign[sel]
        local[sel, others[0]] = uv[sel, 0]
        local[sel, others[1]] = uv[sel, 1]
    return box_local_to_world(box, local * box.dims)


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Indices of the CCW hull (monotone chain), image coordinates."""
    order = np.lexsort((pts[:, 1], pts[:, 0]))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for i in order:
        while len(lower) >= 2 and cross(pts[lower[-2]], pts[lower[-1]], pts[i]) <= 0:
            lower.pop()
        lower.append(i)
    for i in order[::-1]:
        while len(upper) >= 2 and cross(pts[upper[-2]], pts[upper[-1]], pts[i]) <= 0:
            upper.pop()
        upper.append(i)
    return np.array(lower[:-1] + upper[:-1])


def _silhouette_events(mb: MovingBox, n: int, cam: CameraModel, jitter: float,
                       rng: np.random.Generator) -> np.ndarray:
    """``(n, 4)`` rows ``(t, x, y, p)`` before image-bounds filtering."""
    taus = rng.uniform(0.0, 1.0, size=n)
    s_draw = rng.uniform(0.0, 1.0, size=n)
    noise = rng.normal(0.0, jitter, size=(n, 2)) if jitter > 0 else np.zeros((n, 2))
    v = np.asarray(mb.velocity, float)
    omega = np.array([0.0, 0.0, mb.yaw_rate])
    out = np.zeros((n, 4))
    for k in range(n):
        box = mb.at(taus[k])
        corners = box_corners(box)
        uv, depth = project_points(cam, corners)
        if np.any(depth <= 1e-6):
            out[k] = (taus[k], -1, -1, 1)
            continue
        hull = _convex_hull(uv)
        a, b = uv[hull], uv[np.roll(hull, -1)]
        lengths = np.linalg.norm(b - a, axis=1)
        s = s_draw[k] * lengths.sum()
        e = min(int(np.searchsorted(np.cumsum(lengths), s, side="right")), len(hull) - 1)
        f = (s - (np.cumsum(lengths)[e] - lengths[e])) / max(lengths[e], 1e-12)
        pix = a[e] + f * (b[e] - a[e])
        p3 = corners[hull[e]] + f * (corners[np.roll(hull, -1)[e]] - corners[hull[e]])
        vel = v + np.cross(omega, p3 - box.center)
        ends, _ = project_points(cam, np.stack([p3, p3 + 1e-3 * vel]))
        flow = ends[1] - ends[0]
        edge = b[e] - a[e]
        # outward normal of a counter-clockwise edge (dx, dy)
        normal = np.array([edge[1], -edge[0]])
        pol = 1 if float(np.dot(normal, flow)) >= 0.0 else -1
        px = np.rint(pix + noise[k])
        out[k] = (taus[k], px[0], px[1], pol)
    return out


def generate(spec: ScenarioSpec) -> Scenario:
    rng = np.random.default_rng(spec.seed)
    cam = spec.camera
    lo, hi = np.array(spec.voxel_config.range_min), np.array(spec.voxel_config.range_max)
    pts0, pts1, ev_rows, proposals, gt = [], [], [], [], []
    for i, mb in enumerate(spec.boxes):
        b0 = mb.box
        if np.any(b0.center < lo) or np.any(b0.center >= hi):
            log.warning("box %d starts outside the voxel range", i)
        pts0.append(sample_surface_points(b0, spec.points_per_box, rng))
        pts1.append(sample_surface_points(mb.at(1.0), spec.points_per_box, rng))
        n_events = int(round(spec.events_per_unit_motion * mb.displacement()))
        if n_events:
            ev_rows.append(_silhouette_events(mb, n_events, cam, spec.event_pixel_jitter, rng))
        center = b0.center + (rng.normal(0.0, spec.proposal_noise, 3) if spec.proposal_noise > 0 else 0.0)
        proposals.append(BoxProposal(Box3D(center, b0.dims, b0.yaw), mb.class_id, 1.0, f"obj{i}"))
        for t in spec.gt_times:
            gt.append((t, BoxProposal(mb.at(t), mb.class_id, 1.0, f"obj{i}")))
    gt.sort(key=lambda item: item[0])

    def cloud(chunks):
        pts = np.concatenate(chunks) if chunks else np.zeros((0, 3))
        if spec.point_jitter > 0 and len(pts):
            pts = pts + rng.normal(0.0, spec.point_jitter, size=pts.shape)
        return PointCloud(pts)

    cloud0, cloud1 = cloud(pts0), cloud(pts1)
    if ev_rows:
        rows = np.concatenate(ev_rows)
        ok = (rows[:, 1] >= 0) & (rows[:, 1] < cam.width) & (rows[:, 2] >= 0) & (rows[:, 2] < cam.height)
        rows = rows[ok]
        rows = rows[np.argsort(rows[:, 0], kind="stable")]
        events = EventStream(rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3])
    else:
        events = EventStream.empty()
    return Scenario(spec, cloud0, cloud1, events, proposals, gt)
