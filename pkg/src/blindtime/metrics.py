"""Rotated-box AP and heading-weighted APH with per-class IoU thresholds.

APH follows the Waymo convention: each true positive contributes
``max(0, 1 - dtheta / pi)`` to the precision numerator, while recall is the
plain matched fraction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import CLASSES, Box3D, iou_3d

DEFAULT_THRESHOLDS = {"vehicle": 0.7, "pedestrian": 0.5, "cyclist": 0.5}


def heading_error(a: float, b: float) -> float:
    """Absolute heading difference wrapped into [0, pi]."""
    d = abs((a - b) % (2 * np.pi))
    return float(min(d, 2 * np.pi - d))


def heading_weight(err: float) -> float:
    return max(0.0, 1.0 - err / np.pi)


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    bucket_edges: tuple = tuple(round(0.1 * k, 10) for k in range(11))
    interpolation: str = "all-point"

    def __post_init__(self):
        for c, th in self.iou_thresholds.items():
            if not 0.0 < th <= 1.0:
                raise ValueError(f"IoU threshold for {c!r} must lie in (0, 1]")
        if self.interpolation not in ("all-point", "11-point"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


@dataclass(frozen=True)
class MatchResult:
    """Per detection (in input order): matched GT index or -1, IoU and heading error."""

    scores: np.ndarray
    gt_index: np.ndarray
    iou: np.ndarray
    heading_error: np.ndarray
    num_gt: int

    @property
    def tp(self) -> np.ndarray:
        return self.gt_index >= 0


def _as_box(d) -> Box3D:
    return d if isinstance(d, Box3D) else d.box


def match_detections(dets, gts, iou_thresh: float, scores=None) -> MatchResult:
    """Greedy matching in descending score order.

    Each detection claims the unmatched ground truth of highest IoU if that
    IoU reaches ``iou_thresh``. ``dets`` are boxes or objects with ``.box``
    and ``.score``; pass ``scores`` explicitly for bare boxes.
    """
    dets = list(dets)
    gts = [_as_box(g) for g in gts]
    if scores is None:
        scores = [d.score for d in dets]
    scores = np.asarray(scores, dtype=float)
    boxes = [_as_box(d) for d in dets]
    gt_index = np.full(len(dets), -1, np.int64)
    best_iou = np.zeros(len(dets))
    herr = np.zeros(len(dets))
    taken = np.zeros(len(gts), bool)
    for i in sorted(range(len(dets)), key=lambda k: (-scores[k], k)):
        if not gts:
            break
        ious = np.array([iou_3d(boxes[i], g) for g in gts])
        ious[taken] = -1.0
        j = int(np.argmax(ious))
        best_iou[i] = max(ious[j], 0.0)
        if ious[j] >= iou_thresh:
            gt_index[i] = j
            taken[j] = True
            herr[i] = heading_error(boxes[i].yaw, gts[j].yaw)
    return MatchResult(scores, gt_index, best_iou, herr, len(gts))


def _pr_area(scores, weights, tp, num_gt: int, interpolation: str) -> float:
    order = np.argsort(-scores, kind="stable")
    tp = tp[order].astype(float)
    w = weights[order]
    recall = np.cumsum(tp) / num_gt
    precision = np.cumsum(w) / np.arange(1, len(tp) + 1)
    if interpolation == "11-point":
        return float(np.mean([precision[recall >= r].max() if np.any(recall >= r) else 0.0
                              for r in np.linspace(0, 1, 11)]))
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    dr = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(dr * envelope))


def _collect(stream):
    stream = list(stream)
    num_gt = sum(m.num_gt for m in stream)
    if not stream:
        return num_gt, np.zeros(0), np.zeros(0, bool), np.zeros(0)
    scores = np.concatenate([m.scores for m in stream])
    tp = np.concatenate([m.tp for m in stream])
    herr = np.concatenate([m.heading_error for m in stream])
    return num_gt, scores, tp, herr


def compute_ap(stream, interpolation: str = "all-point") -> float | None:
    """Area under the precision-recall curve; ``None`` when there is no ground truth."""
    num_gt, scores, tp, _ = _collect(stream)
    if num_gt == 0:
        return None
    if len(scores) == 0:
        return 0.0
    return _pr_area(scores, tp.astype(float), tp, num_gt, interpolation)


def compute_aph(stream, interpolation: str = "all-point") -> float | None:
    num_gt, scores, tp, herr = _collect(stream)
    if num_gt == 0:
        return None
    if len(scores) == 0:
        return 0.0
    weights = np.where(tp, [heading_weight(e) for e in herr], 0.0)
    return _pr_area(scores, weights, tp, num_gt, interpolation)


def _frame_key(b) -> float:
    return round(float(b.t), 9)


def _bucket(t: float, edges) -> int | None:
    k = int(np.searchsorted(edges, t + 1e-9, side="right")) - 1
    return k if 0 <= k < len(edges) - 1 else None


def _class_streams(dets, gts, cfg: EvalConfig, frame_key):
    """``{class: [(frame, MatchResult), ...]}`` over every frame with dets or GT."""
    frames: dict = {}
    for d in dets:
        frames.setdefault((frame_key(d), d.class_id), ([], []))[0].append(d)
    for g in gts:
        frames.setdefault((frame_key(g), g.class_id), ([], []))[1].append(g)
    out: dict = {}
    for (fk, cls), (fd, fg) in sorted(frames.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        th = cfg.iou_thresholds.get(cls)
        if th is None:
            continue
        m = match_detections(fd, fg, th, scores=[d.score for d in fd])
        out.setdefault(cls, []).append((fk, fd[0].t if fd else fg[0].t, m))
    return out


def _summarize(streams, cfg: EvalConfig) -> dict:
    classes, excluded = {}, []
    for cls in sorted(set(cfg.iou_thresholds) | set(streams), key=lambda c: (CLASSES.index(c) if c in CLASSES else len(CLASSES), c)):
        ms = [m for _, _, m in streams.get(cls, [])]
        ap = compute_ap(ms, cfg.interpolation)
        if ap is None:
            if ms:
                excluded.append(cls)
            continue
        classes[cls] = {
            "ap": ap,
            "aph": compute_aph(ms, cfg.interpolation),
            "num_gt": sum(m.num_gt for m in ms),
            "num_det": int(sum(len(m.scores) for m in ms)),
        }
    mean = (lambda key: float(np.mean([v[key] for v in classes.values()])) if classes else None)
    return {"classes": classes, "mAP": mean("ap"), "mAPH": mean("aph"), "excluded_classes": excluded}


def evaluate(dets, gts, cfg: EvalConfig | None = None, frame_key=_frame_key) -> dict:
    """Per-class AP/APH, their class means, and the same per elapsed-time bucket.

    ``dets`` and ``gts`` are :class:`~blindtime.boxes.LabeledBox` lists; a
    frame is every box sharing ``frame_key`` (the rounded ``t`` by default).
    Classes without ground truth are left out of the means.
    """
    cfg = cfg or EvalConfig()
    dets, gts = list(dets), list(gts)
    streams = _class_streams(dets, gts, cfg, frame_key)
    report = _summarize(streams, cfg)
    edges = np.asarray(cfg.bucket_edges, dtype=float)
    buckets = []
    for k in range(len(edges) - 1):
        sub = {c: [(fk, t, m) for fk, t, m in s if _bucket(t, edges) == k] for c, s in streams.items()}
        summary = _summarize(sub, cfg)
        buckets.append({"t_start": float(edges[k]), "t_end": float(edges[k + 1]),
                        "mAP": summary["mAP"], "mAPH": summary["mAPH"]})
    report["buckets"] = buckets
    report["iou_thresholds"] = dict(cfg.iou_thresholds)
    return report


def format_report(report: dict) -> str:
    def fmt(v):
        return "   n/a" if v is None else f"{100 * v:6.2f}"

    lines = [f"{'class':<12}{'AP':>8}{'APH':>8}{'#gt':>7}{'#det':>7}"]
    for cls, v in report["classes"].items():
        lines.append(f"{cls:<12}{fmt(v['ap']):>8}{fmt(v['aph']):>8}{v['num_gt']:>7}{v['num_det']:>7}")
    lines.append(f"{'mean':<12}{fmt(report['mAP']):>8}{fmt(report['mAPH']):>8}")
    if report.get("excluded_classes"):
        lines.append("excluded (no ground truth): " + ", ".join(report["excluded_classes"]))
    lines.append("")
    lines.append(f"{'t bucket':<14}{'mAP':>8}{'mAPH':>8}")
    for b in report.get("buckets", []):
        lines.append(f"[{b['t_start']:.2f}, {b['t_end']:.2f}){fmt(b['mAP']):>8}{fmt(b['mAPH']):>8}")
    return "\n".join(lines) + "\n"
