"""End-to-end library entry points; the CLI is a thin wrapper over these."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import io
from .annotations import TimedPointCloud, group_tracks, interpolate_annotations, sync_to_image_time
from .boxes import LabeledBox, nms
from .config import RunConfig
from .fusion import ActiveFrame, BlindTimeModel
from .metrics import evaluate
from .synthetic import Scenario, generate
from .training import Trainer
from .voxels import VoxelEncoder, build_voxel_features

log = logging.getLogger(__name__)

# files a dataset directory holds, with the time span each one covers
DATASET_FILES = {
    "points.csv": (0.0, 0.0),
    "proposals.jsonl": (0.0, 0.0),
    "camera.json": (0.0, 0.0),
    "events.csv": (0.0, 1.0),
    "gt.jsonl": (0.0, 0.9),
    "points_next.csv": (1.0, 1.0),
}
ONLINE_FILES = ("points.csv", "proposals.jsonl", "camera.json", "events.csv")


def write_scenario(sc: Scenario, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in DATASET_FILES}
    io.write_events(paths["events.csv"], sc.events)
    io.write_points(paths["points.csv"], sc.cloud)
    io.write_points(paths["points_next.csv"], sc.cloud_next)
    io.write_boxes(paths["gt.jsonl"], [LabeledBox(t, p.box, p.class_id, None, p.track_id) for t, p in sc.gt])
    io.write_boxes(paths["proposals.jsonl"], [LabeledBox(0.0, p.box, p.class_id, p.score, p.track_id)
                                              for p in sc.proposals])
    io.write_json(paths["camera.json"], io.camera_to_dict(sc.spec.camera))
    io.write_json(out / "manifest.json", {
        "files": {k: {"t_start": a, "t_end": b} for k, (a, b) in DATASET_FILES.items()},
        "frame_interval": 1.0,
    })
    return paths


def synth(cfg: RunConfig, out_dir) -> dict[str, Path]:
    return write_scenario(generate(cfg.scenario_spec()), out_dir)


def load_online_inputs(data_dir):
    """Everything available at the active timestamp plus the event stream."""
    d = Path(data_dir)
    cloud = io.read_points(d / "points.csv")
    proposals = [b.as_proposal() for b in io.read_boxes(d / "proposals.jsonl")]
    cam = io.camera_from_dict(io.read_json(d / "camera.json"))
    events = io.read_events(d / "events.csv")
    return cloud, proposals, cam, events


def prepare_frame(cfg: RunConfig, model: BlindTimeModel, venc: VoxelEncoder, cloud, proposals, cam) -> ActiveFrame:
    grid = build_voxel_features(cloud, cfg.voxel_config(), venc)
    return ActiveFrame(proposals, grid, cam, model.S, model.nonempty_mask)


def _gt_lookup(gt: list[LabeledBox], proposals):
    """``gt_fn(t)`` aligned to proposals by track id."""
    table: dict = {}
    for g in gt:
        table.setdefault(round(g.t, 9), {})[g.track_id] = g.as_proposal()

    def gt_fn(t):
        row = table[round(float(t), 9)]
        return [row[p.track_id] for p in proposals]

    times = sorted(t for t in table if t > 0 and all(p.track_id in table[t] for p in proposals))
    return gt_fn, times


def train(cfg: RunConfig, data_dir, model: BlindTimeModel | None = None, venc: VoxelEncoder | None = None):
    """Train the blind-time heads on a dataset directory.

    Returns ``(model, voxel_encoder, per_step_losses, (initial_loss, final_loss))``
    where the initial/final losses are measured on every annotated blind time.
    """
    if model is None or venc is None:
        model, venc = cfg.init_model()
    cloud, proposals, cam, events = load_online_inputs(data_dir)
    gt = io.read_boxes(Path(data_dir) / "gt.jsonl")
    frame = prepare_frame(cfg, model, venc, cloud, proposals, cam)
    gt_fn, times = _gt_lookup(gt, proposals)
    if not times:
        raise ValueError("no ground truth at blind times matches the proposals")
    trainer = Trainer(frame, events, gt_fn, model, cfg.train_config(), times=times)
    initial = trainer.evaluate(times)
    trainer.run()
    final = trainer.evaluate(times)
    return trainer.model, venc, trainer.losses, (initial, final)


def infer(cfg: RunConfig, data_dir, model: BlindTimeModel, venc: VoxelEncoder, times) -> list[LabeledBox]:
    """Detections at each requested blind time, ordered by t then descending score.

    Reads only the files available online (no ground truth, nothing from the
    next active timestamp).
    """
    cloud, proposals, cam, events = load_online_inputs(data_dir)
    frame = prepare_frame(cfg, model, venc, cloud, proposals, cam)
    out = []
    for t in sorted(float(t) for t in times):
        dets = nms(frame.detect(events, model, t), cfg["nms_threshold"], per_class=True)
        dets.sort(key=lambda p: -p.score)
        out += [LabeledBox(t, p.box, p.class_id, p.score, p.track_id) for p in dets]
    return out


def evaluate_files(cfg: RunConfig, det_path, gt_path) -> dict:
    return evaluate(io.read_boxes(det_path), io.read_boxes(gt_path), cfg.eval_config())


def interp_annotations(track_path, subdivisions: int) -> list[LabeledBox]:
    out = []
    for track in group_tracks(io.read_boxes(track_path)):
        out += interpolate_annotations(track, subdivisions)
    out.sort(key=lambda b: (b.t, str(b.track_id)))
    return out


def sync_clouds(cloud_paths, pose_path, image_times) -> list:
    """One synchronized cloud per image time, from sweeps paired with pose rows in order."""
    poses = io.read_poses(pose_path)
    if len(poses) != len(cloud_paths):
        raise ValueError(f"{len(cloud_paths)} clouds but {len(poses)} poses")
    sweeps = sorted(
        (TimedPointCloud(io.read_points(p), t, pose) for p, (t, pose) in zip(cloud_paths, poses)),
        key=lambda s: s.timestamp,
    )
    stamps = np.array([s.timestamp for s in sweeps])
    out = []
    for t in image_times:
        k = int(np.searchsorted(stamps, t, side="right"))
        if k == 0 or (k == len(sweeps) and t > stamps[-1]):
            raise ValueError(f"image time {t!r} not bracketed by LiDAR sweeps")
        lo = min(k - 1, len(sweeps) - 2) if len(sweeps) > 1 else 0
        hi = min(lo + 1, len(sweeps) - 1)
        out.append(sync_to_image_time(t, sweeps[lo], sweeps[hi]))
    return out
