"""Run configuration: one JSON document, every field defaulted."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .boxes import Box3D
from .events import EventEncoder
from .fusion import BlindTimeModel, HeadParams
from .geometry import CameraModel, forward_camera
from .metrics import EvalConfig
from .nn import LossWeights
from .synthetic import MovingBox, ScenarioSpec, default_boxes
from .training import TrainConfig
from .voxels import VoxelConfig, VoxelEncoder

DEFAULTS = {
    "seed": 0,
    "voxel": {"range_min": [0.0, -75.2, -2.0], "range_max": [75.2, 75.2, 4.0], "voxel_size": [0.1, 0.1, 0.15]},
    "model": {
        "channels": 16,
        "event_bins": 5,
        "event_stride": 4,
        "event_hidden": 16,
        "grid_size": 6,
        "field_channels": 16,
        "fusion_hidden": 32,
        "head_hidden": [64, 64],
        "nonempty_mask": True,
    },
    "train": {
        "steps": 2000,
        "lr": 1e-3,
        "times_per_step": 3,
        "theta_low": 0.25,
        "theta_high": 0.75,
        "lambda_reg": 1.0,
        "lambda_score": 1.0,
        "smooth_l1_beta": 1.0,
    },
    "nms_threshold": 0.1,
    "eval": {
        "iou_thresholds": {"vehicle": 0.7, "pedestrian": 0.5, "cyclist": 0.5},
        "bucket_edges": [round(0.1 * k, 10) for k in range(11)],
        "interpolation": "all-point",
    },
    "scenario": {
        "points_per_box": 400,
        "events_per_unit_motion": 600.0,
        "point_jitter": 0.01,
        "event_pixel_jitter": 0.5,
        "proposal_noise": 0.0,
        "camera": {"width": 320, "height": 240, "focal": 200.0},
        "boxes": None,
    },
    "paths": {"data": "data", "checkpoint": "checkpoint.json"},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise KeyError(f"unknown config key {k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict) and k != "iou_thresholds":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _box_from(d: dict) -> MovingBox:
    return MovingBox(Box3D(d["center"], d["dims"], d.get("yaw", 0.0)), tuple(d.get("velocity", (0, 0, 0))),
                     float(d.get("yaw_rate", 0.0)), d.get("class", "vehicle"))


@dataclass(frozen=True)
class RunConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def load(cls, path=None, **overrides) -> RunConfig:
        data = copy.deepcopy(DEFAULTS)
        if path is not None:
            data = _merge(data, json.loads(Path(path).read_text()))
        for k, v in overrides.items():
            if v is not None:
                data = _merge(data, {k: v})
        cfg = cls(data)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    def validate(self) -> None:
        self.voxel_config()
        self.train_config()
        self.eval_config()
        m = self.data["model"]
        if m["grid_size"] < 1 or m["event_bins"] < 1 or m["channels"] < 1:
            raise ValueError("model sizes must be positive")
        cam = self.camera()
        if cam.width % m["event_stride"] or cam.height % m["event_stride"]:
            raise ValueError("image size must be divisible by event_stride")

    def hash(self) -> str:
        """Digest of everything except file paths."""
        d = {k: v for k, v in self.data.items() if k != "paths"}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def voxel_config(self) -> VoxelConfig:
        v = self.data["voxel"]
        return VoxelConfig(tuple(v["range_min"]), tuple(v["range_max"]), tuple(v["voxel_size"]))

    def train_config(self) -> TrainConfig:
        t = self.data["train"]
        return TrainConfig(
            steps=int(t["steps"]), lr=float(t["lr"]), times_per_step=int(t["times_per_step"]),
            theta_low=float(t["theta_low"]), theta_high=float(t["theta_high"]),
            weights=LossWeights(float(t["lambda_reg"]), float(t["lambda_score"])),
            smooth_l1_beta=float(t["smooth_l1_beta"]), seed=int(self.data["seed"]),
        )

    def eval_config(self) -> EvalConfig:
        e = self.data["eval"]
        return EvalConfig(dict(e["iou_thresholds"]), tuple(e["bucket_edges"]), e["interpolation"])

    def camera(self) -> CameraModel:
        c = self.data["scenario"]["camera"]
        return forward_camera(c["width"], c["height"], c["focal"])

    def scenario_spec(self) -> ScenarioSpec:
        s = self.data["scenario"]
        boxes = default_boxes() if s["boxes"] is None else tuple(_box_from(b) for b in s["boxes"])
        return ScenarioSpec(
            seed=int(self.data["seed"]), boxes=boxes, points_per_box=int(s["points_per_box"]),
            events_per_unit_motion=float(s["events_per_unit_motion"]), camera=self.camera(),
            point_jitter=float(s["point_jitter"]), event_pixel_jitter=float(s["event_pixel_jitter"]),
            proposal_noise=float(s["proposal_noise"]), voxel_config=self.voxel_config(),
        )

    def init_model(self) -> tuple[BlindTimeModel, VoxelEncoder]:
        """Fresh heads plus the frozen toy encoders, all seeded from ``seed``."""
        m, seed = self.data["model"], int(self.data["seed"])
        heads = HeadParams.init(m["channels"], m["grid_size"], m["field_channels"], m["fusion_hidden"],
                                tuple(m["head_hidden"]), seed=seed + 2)
        enc = EventEncoder.random(m["event_bins"], m["channels"], m["event_stride"], m["event_hidden"], seed=seed + 3)
        venc = VoxelEncoder.random(m["channels"], seed=seed + 1)
        return BlindTimeModel(heads, enc, m["grid_size"], m["event_bins"], bool(m["nonempty_mask"])), venc
