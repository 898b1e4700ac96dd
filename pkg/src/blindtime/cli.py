"""Command line interface: synth, train, infer, eval, interp-annotations, sync."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import io, pipeline
from .config import RunConfig
from .metrics import format_report

log = logging.getLogger("blindtime")


def _config(args) -> RunConfig:
    return RunConfig.load(getattr(args, "config", None), seed=getattr(args, "seed", None))


def cmd_synth(args) -> None:
    cfg = _config(args)
    paths = pipeline.synth(cfg, args.out)
    log.info("wrote %s", ", ".join(sorted(p.name for p in paths.values())))


def cmd_train(args) -> None:
    cfg = _config(args)
    data = args.data or cfg["paths"]["data"]
    model, venc, losses, (initial, final) = pipeline.train(cfg, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_model(out / "checkpoint.json", model, venc, cfg.hash())
    with open(out / "loss_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for k, loss in enumerate(losses, 1):
            w.writerow([k, repr(loss)])
    io.write_json(out / "train_summary.json", {"initial_loss": initial, "final_loss": final,
                                               "steps": len(losses), "config_hash": cfg.hash()})
    log.info("loss %.6g -> %.6g over %d steps", initial, final, len(losses))


def _parse_times(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_infer(args) -> None:
    cfg = _config(args)
    model, venc, ckpt_hash = io.load_model(args.checkpoint)
    if ckpt_hash and ckpt_hash != cfg.hash():
        log.warning("checkpoint config hash %s differs from current config %s", ckpt_hash, cfg.hash())
    m = cfg["model"]
    if model.S != m["grid_size"] or venc.channels != m["channels"]:
        raise ValueError("checkpoint shapes do not match the configuration")
    dets = pipeline.infer(cfg, args.data or cfg["paths"]["data"], model, venc, _parse_times(args.times))
    io.write_boxes(args.out, dets)


def cmd_eval(args) -> None:
    cfg = _config(args)
    report = pipeline.evaluate_files(cfg, args.detections, args.gt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "report.json", report)
    text = format_report(report)
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)


def cmd_interp(args) -> None:
    io.write_boxes(args.out, pipeline.interp_annotations(args.tracks, args.subdivisions))


def cmd_sync(args) -> None:
    with open(args.image_times) as fh:
        times = [float(line.split(",")[0]) for line in fh if line.strip() and not line.startswith("t")]
    clouds = pipeline.sync_clouds(args.clouds, args.poses, times)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, cloud in enumerate(clouds):
        io.write_points(out / f"image_{k:04d}.csv", cloud)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blindtime", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic scene")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train the blind-time heads")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--data")
    p.add_argument("--out", required=True)

    p = add("infer", cmd_infer, "detect boxes at blind times")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--times", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "AP/APH report")
    p.add_argument("--config")
    p.add_argument("--detections", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)

    p = add("interp-annotations", cmd_interp, "densify keyframe tracks")
    p.add_argument("--tracks", required=True)
    p.add_argument("--subdivisions", type=int, default=10)
    p.add_argument("--out", required=True)

    p = add("sync", cmd_sync, "align LiDAR sweeps to image times")
    p.add_argument("--clouds", nargs="+", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--image-times", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                     "command": args.command}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
