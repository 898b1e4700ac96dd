"""Rigid transforms, unit quaternions, SLERP and pinhole projection.

Conventions used everywhere in the package:

* quaternions are ``(w, x, y, z)`` with the Hamilton product, right-handed frames;
* a :class:`CameraModel` extrinsic maps LiDAR/world coordinates into the camera
  frame (camera ``z`` forward, ``x`` right, ``y`` down);
* projection divides by camera-frame depth.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-6
SLERP_LINEAR_THRESHOLD = 1.0 - 1e-7
MIN_DEPTH = 1e-6


class BehindCameraError(ValueError):
    """Raised when a point does not lie in front of the image plane."""


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]; in-range values pass through untouched."""
    a = np.asarray(a, dtype=float)
    if np.ndim(a) == 0 and -np.pi < a <= np.pi:
        return float(a)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    w = np.where((a > -np.pi) & (a <= np.pi), a, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


@dataclass(frozen=True)
class Quaternion:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        q = np.array([self.w, self.x, self.y, self.z], dtype=float)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("quaternion must have finite nonzero norm")
        q = q / n
        if q[0] < 0.0:
            q = -q
        for name, v in zip("wxyz", q):
            object.__setattr__(self, name, float(v))

    @classmethod
    def identity(cls) -> Quaternion:
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q) -> Quaternion:
        w, x, y, z = np.asarray(q, dtype=float)
        return cls(w, x, y, z)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> Quaternion:
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        s = np.sin(angle / 2.0)
        return cls(np.cos(angle / 2.0), *(axis * s))

    @classmethod
    def from_yaw(cls, yaw: float) -> Quaternion:
        return cls.from_axis_angle((0.0, 0.0, 1.0), yaw)

    @classmethod
    def from_matrix(cls, R) -> Quaternion:
        R = np.asarray(R, dtype=float)
        tr = np.trace(R)
        if tr > 0.0:
            s = 2.0 * np.sqrt(tr + 1.0)
            q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
            q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        elif R[1, 1] > R[2, 2]:
            s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
            q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
            q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        return cls(*q)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> Quaternion:
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: Quaternion) -> Quaternion:
        w1, x1, y1, z1 = self.as_array()
        w2, x2, y2, z2 = other.as_array()
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.as_array()
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def yaw(self) -> float:
        """Heading of the rotated x axis about world z."""
        R = self.to_matrix()
        return wrap_angle(np.arctan2(R[1, 0], R[0, 0]))

    def angle_to(self, other: Quaternion) -> float:
        """Rotation angle (rad) separating two orientations, in [0, pi]."""
        d = abs(float(np.dot(self.as_array(), other.as_array())))
        return 2.0 * float(np.arccos(min(1.0, d)))


def _check_unit(q) -> np.ndarray:
    arr = q.as_array() if isinstance(q, Quaternion) else np.asarray(q, dtype=float)
    if abs(np.linalg.norm(arr) - 1.0) > UNIT_TOL:
        raise ValueError(f"slerp needs unit quaternions, got norm {np.linalg.norm(arr)!r}")
    return arr


def slerp(q0, q1, t: float) -> Quaternion:
    """Spherical linear interpolation along the shorter arc.

    Accepts :class:`Quaternion` or raw ``(w, x, y, z)`` arrays; raw arrays are
    checked for unit norm since they bypass constructor normalization.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t!r}")
    a = _check_unit(q0)
    b = _check_unit(q1)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > SLERP_LINEAR_THRESHOLD:
        return Quaternion.from_array((1.0 - t) * a + t * b)
    theta = np.arccos(dot)
    s = np.sin(theta)
    return Quaternion.from_array((np.sin((1.0 - t) * theta) * a + np.sin(t * theta) * b) / s)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, M) -> RigidTransform:
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M


def transform_compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a`` after ``b``: ``compose(a, b)(p) == a(b(p))``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def transform_invert(a: RigidTransform) -> RigidTransform:
    Rt = a.rotation.T
    return RigidTransform(Rt, -Rt @ a.translation)


def transform_apply(a: RigidTransform, p) -> np.ndarray:
    """Apply to a single 3-vector or an ``(N, 3)`` array of points."""
    p = np.asarray(p, dtype=float)
    return p @ a.rotation.T + a.translation


@dataclass(frozen=True)
class Pose:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: Quaternion = field(default_factory=Quaternion.identity)

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        p.flags.writeable = False
        object.__setattr__(self, "position", p)

    def to_transform(self) -> RigidTransform:
        return RigidTransform(self.orientation.to_matrix(), self.position)


def pose_interpolate(x0: Pose, x1: Pose, t: float) -> Pose:
    """Linear position, SLERP orientation."""
    pos = (1.0 - t) * x0.position + t * x1.position
    return Pose(pos, slerp(x0.orientation, x1.orientation, t))


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    extrinsic: RigidTransform = field(default_factory=RigidTransform.identity)
    image_size: tuple[int, int] = (320, 240)  # (width, height)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValueError("image_size must be positive")
        object.__setattr__(self, "image_size", (int(w), int(h)))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]


def project_points(cam: CameraModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection without the depth check.

    Returns ``(pixels (N, 2), depth (N,))``; pixels of points with
    ``depth <= MIN_DEPTH`` are NaN.
    """
    q = transform_apply(cam.extrinsic, np.atleast_2d(points))
    depth = q[:, 2]
    ok = depth > MIN_DEPTH
    safe = np.where(ok, depth, 1.0)
    uv = np.stack([cam.fx * q[:, 0] / safe + cam.cx, cam.fy * q[:, 1] / safe + cam.cy], axis=1)
    uv[~ok] = np.nan
    return uv, depth


def project_point(cam: CameraModel, p_world) -> tuple[np.ndarray, float]:
    uv, depth = project_points(cam, np.asarray(p_world, dtype=float).reshape(1, 3))
    if not depth[0] > MIN_DEPTH:
        raise BehindCameraError(f"point has camera depth {depth[0]:.3g} m")
    return uv[0], float(depth[0])


# LiDAR (x fwd, y left, z up) -> camera (x right, y down, z fwd)
LIDAR_TO_CAMERA_ROTATION = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def forward_camera(width: int = 320, height: int = 240, focal: float = 200.0,
                   offset=(0.0, 0.0, 0.0)) -> CameraModel:
    """Front-facing pinhole camera looking down the LiDAR +x axis."""
    E = RigidTransform(LIDAR_TO_CAMERA_ROTATION, -LIDAR_TO_CAMERA_ROTATION @ np.asarray(offset, float))
    return CameraModel(focal, focal, width / 2.0, height / 2.0, E, (width, height))
