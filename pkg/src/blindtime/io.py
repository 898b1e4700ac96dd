"""Readers and writers for the on-disk formats.

* events: CSV ``t,x,y,p`` sorted by ``t``
* point clouds: CSV ``x,y,z[,intensity]``
* boxes: JSON lines ``{"t", "class", "center", "dims", "yaw"[, "score"][, "track_id"]}``
* poses: CSV ``t,x,y,z,qw,qx,qy,qz``
* camera: JSON ``{"fx", "fy", "cx", "cy", "width", "height", "rotation", "translation"}``
* model checkpoint: JSON ``{"format", "version", "config_hash", "meta", "tensors"}`` where each
  tensor is ``{"shape": [...], "data": [flat row-major values]}``
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .boxes import LabeledBox
from .events import EventEncoder, EventStream
from .fusion import BlindTimeModel, HeadParams
from .geometry import CameraModel, Pose, Quaternion, RigidTransform
from .nn import Layer, MlpParams
from .voxels import PointCloud, VoxelEncoder

CHECKPOINT_FORMAT = "blindtime-model"
CHECKPOINT_VERSION = 1


def write_events(path, events: EventStream) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "p"])
        for t, x, y, p in zip(events.t, events.x, events.y, events.p):
            w.writerow([repr(float(t)), int(x), int(y), int(p)])


def read_events(path) -> EventStream:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return EventStream.empty()
    t = np.array([float(r["t"]) for r in rows])
    if np.any(np.diff(t) < 0):
        raise ValueError(f"{path}: events are not sorted by t")
    return EventStream(t, [int(r["x"]) for r in rows], [int(r["y"]) for r in rows], [int(r["p"]) for r in rows])


def write_points(path, cloud: PointCloud) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        has_i = cloud.intensity is not None
        w.writerow(["x", "y", "z"] + (["intensity"] if has_i else []))
        for k, p in enumerate(cloud.points):
            w.writerow([repr(float(c)) for c in p] + ([repr(float(cloud.intensity[k]))] if has_i else []))


def read_points(path) -> PointCloud:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        fields = reader.fieldnames or []
    if not rows:
        return PointCloud(np.zeros((0, 3)))
    pts = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])
    inten = np.array([float(r["intensity"]) for r in rows]) if "intensity" in fields else None
    return PointCloud(pts, inten)


def write_boxes(path, boxes) -> None:
    with open(path, "w") as fh:
        for b in boxes:
            fh.write(json.dumps(b.to_record()) + "\n")


def read_boxes(path) -> list[LabeledBox]:
    with open(path) as fh:
        return [LabeledBox.from_record(json.loads(line)) for line in fh if line.strip()]


def write_poses(path, poses) -> None:
    """``poses``: iterable of ``(t, Pose)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "z", "qw", "qx", "qy", "qz"])
        for t, pose in poses:
            w.writerow([repr(float(v)) for v in [t, *pose.position, *pose.orientation.as_array()]])


def read_poses(path) -> list[tuple[float, Pose]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        (float(r["t"]), Pose([float(r["x"]), float(r["y"]), float(r["z"])],
                             Quaternion(float(r["qw"]), float(r["qx"]), float(r["qy"]), float(r["qz"]))))
        for r in rows
    ]


def camera_to_dict(cam: CameraModel) -> dict:
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "rotation": cam.extrinsic.rotation.tolist(), "translation": cam.extrinsic.translation.tolist(),
    }


def camera_from_dict(d: dict) -> CameraModel:
    E = RigidTransform(d.get("rotation", np.eye(3)), d.get("translation", np.zeros(3)))
    return CameraModel(d["fx"], d["fy"], d["cx"], d["cy"], E, (d["width"], d["height"]))


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---- checkpoints ------------------------------------------------------------

def _mlp_meta(mlp: MlpParams) -> list[str]:
    return [layer.activation for layer in mlp.layers]


def _mlp_from(tensors: dict, prefix: str, activations) -> MlpParams:
    return MlpParams(tuple(
        Layer(tensors[f"{prefix}.{i}.weight"], tensors[f"{prefix}.{i}.bias"], act)
        for i, act in enumerate(activations)
    ))


def model_to_dict(model: BlindTimeModel, voxel_encoder: VoxelEncoder, config_hash: str = "") -> dict:
    tensors = dict(model.heads.named_tensors())
    enc = model.event_encoder
    if enc.mlp is not None:
        for j, arr in enumerate(enc.mlp.tensors()):
            tensors[f"event_encoder.{j // 2}.{'weight' if j % 2 == 0 else 'bias'}"] = arr
    tensors["voxel_encoder.weight"] = voxel_encoder.weight
    meta = {
        "S": model.S,
        "bins": model.bins,
        "nonempty_mask": model.nonempty_mask,
        "event_stride": enc.stride,
        "event_encoder": None if enc.mlp is None else _mlp_meta(enc.mlp),
        "voxel_count_scale": voxel_encoder.count_scale,
        "activations": {h: _mlp_meta(getattr(model.heads, h)) for h in ("fusion", "motion", "confidence")},
    }
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "meta": meta,
        "tensors": {k: {"shape": list(v.shape), "data": np.asarray(v, float).ravel().tolist()}
                    for k, v in sorted(tensors.items())},
    }


def model_from_dict(d: dict) -> tuple[BlindTimeModel, VoxelEncoder, str]:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    tensors = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in d["tensors"].items()}
    meta = d["meta"]
    acts = meta["activations"]
    heads = HeadParams(*(_mlp_from(tensors, h, acts[h]) for h in ("fusion", "motion", "confidence")))
    enc_mlp = None if meta["event_encoder"] is None else _mlp_from(tensors, "event_encoder", meta["event_encoder"])
    model = BlindTimeModel(heads, EventEncoder(meta["event_stride"], enc_mlp), meta["S"], meta["bins"],
                           meta["nonempty_mask"])
    venc = VoxelEncoder(tensors["voxel_encoder.weight"], meta["voxel_count_scale"])
    return model, venc, d.get("config_hash", "")


def save_model(path, model: BlindTimeModel, voxel_encoder: VoxelEncoder, config_hash: str = "") -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, voxel_encoder, config_hash)) + "\n")


def load_model(path) -> tuple[BlindTimeModel, VoxelEncoder, str]:
    return model_from_dict(json.loads(Path(path).read_text()))
