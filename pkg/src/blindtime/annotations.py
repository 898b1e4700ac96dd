"""Annotation densification, pose-based LiDAR/image synchronization and label filters."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .boxes import Box3D, LabeledBox, points_in_box
from .geometry import Pose, Quaternion, pose_interpolate, slerp, transform_apply, transform_compose, transform_invert
from .voxels import PointCloud

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackedAnnotation:
    track_id: str
    class_id: str
    keyframes: tuple  # ((t, Box3D), ...), strictly increasing t

    def __post_init__(self):
        kf = tuple((float(t), b) for t, b in self.keyframes)
        ts = [t for t, _ in kf]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"keyframe timestamps of track {self.track_id!r} must increase strictly")
        object.__setattr__(self, "keyframes", kf)


def interpolate_box(b0: Box3D, b1: Box3D, f: float) -> Box3D:
    """Linear center and dims, yaw by quaternion SLERP about z."""
    if f == 0.0:
        return b0
    yaw = slerp(Quaternion.from_yaw(b0.yaw), Quaternion.from_yaw(b1.yaw), f).yaw()
    return Box3D((1 - f) * b0.center + f * b1.center, (1 - f) * b0.dims + f * b1.dims, yaw)


def interpolate_annotations(track: TrackedAnnotation, subdivisions: int = 10) -> list[LabeledBox]:
    """Densify keyframes: ``subdivisions`` evenly spaced boxes per interval plus the last keyframe."""
    if subdivisions < 1:
        raise ValueError("subdivisions must be >= 1")
    kf = track.keyframes
    if len(kf) < 2:
        log.warning("track %s has %d keyframe(s); passing through", track.track_id, len(kf))
        return [LabeledBox(t, b, track.class_id, None, track.track_id) for t, b in kf]
    out = []
    for (ta, ba), (tb, bb) in zip(kf, kf[1:]):
        for j in range(subdivisions):
            f = j / subdivisions
            out.append(LabeledBox(ta + f * (tb - ta), interpolate_box(ba, bb, f), track.class_id, None, track.track_id))
    t_last, b_last = kf[-1]
    out.append(LabeledBox(t_last, b_last, track.class_id, None, track.track_id))
    return out


def group_tracks(records) -> list[TrackedAnnotation]:
    """Collect :class:`LabeledBox` records into tracks keyed by ``track_id``."""
    tracks: dict = {}
    for r in records:
        if r.track_id is None:
            raise ValueError("track records need a track_id")
        tracks.setdefault(r.track_id, (r.class_id, []))[1].append((r.t, r.box))
    return [TrackedAnnotation(tid, cls, tuple(sorted(kf, key=lambda k: k[0]))) for tid, (cls, kf) in tracks.items()]


@dataclass(frozen=True)
class TimedPointCloud:
    cloud: PointCloud
    timestamp: float
    pose: Pose  # sensor in world


def select_nearest_source(t: float, t0: float, t1: float) -> float:
    """``t0`` when strictly nearer, otherwise ``t1`` (ties go to ``t1``)."""
    if not t0 < t1:
        raise ValueError("need t0 < t1")
    return t0 if abs(t - t0) < abs(t - t1) else t1


def sync_pointcloud_to_time(source: TimedPointCloud, x_t: Pose) -> PointCloud:
    """Re-express ``source`` in the sensor frame at pose ``x_t``."""
    T = transform_compose(transform_invert(x_t.to_transform()), source.pose.to_transform())
    return PointCloud(transform_apply(T, source.cloud.points), source.cloud.intensity)


def sync_to_image_time(t: float, c0: TimedPointCloud, c1: TimedPointCloud) -> PointCloud:
    """Point cloud aligned to an image taken at ``t`` between two LiDAR sweeps."""
    t0, t1 = c0.timestamp, c1.timestamp
    if not t0 <= t <= t1:
        raise ValueError(f"image time {t!r} outside [{t0!r}, {t1!r}]")
    if t1 == t0:
        return sync_pointcloud_to_time(c0, c0.pose)
    x_t = pose_interpolate(c0.pose, c1.pose, (t - t0) / (t1 - t0))
    source = c0 if select_nearest_source(t, t0, t1) == t0 else c1
    return sync_pointcloud_to_time(source, x_t)


def filter_annotations(annos, cloud: PointCloud, max_range: float = 50.0, min_points: int = 2) -> list[LabeledBox]:
    """Drop boxes with fewer than ``min_points`` interior points or centers beyond ``max_range``.

    Range is the Euclidean distance of the box center from the sensor origin.
    """
    out = []
    for a in annos:
        if np.linalg.norm(a.box.center) > max_range:
            continue
        if len(cloud) == 0 or int(points_in_box(a.box, cloud.points).sum()) < min_points:
            continue
        out.append(a)
    return out
