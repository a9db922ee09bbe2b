"""Command-line entry points.

Commands: synth, extract, train-slc, distill, eval, render. Every command
accepts --seed and is byte-deterministic under it. Module errors exit
with code 1 and one machine-readable JSON line on stderr; configuration
problems exit with code 2. All logging goes to stderr.
"""

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import io
from .config import Config
from .distill import run_adaptation
from .errors import ConfigError, LaneKitError
from .extraction import extract_lanes
from .labels import rasterize_mask, to_row_anchors
from .metrics import tusimple_eval
from .slc import train_slc
from .synthworld import FrameSample, make_dataset

# Overlay colors, RGB.
COLOR_GT = (0, 255, 0)
COLOR_NOISY = (255, 0, 0)
COLOR_REFINED = (0, 0, 255)


def _log(msg):
    print(msg, file=sys.stderr)


def _load_config(path):
    if path is None:
        return Config()
    return Config.from_file(path)


def _gray_image(rgb):
    """(H, W, 3) float -> (H, W, 1) float32 single channel."""
    return rgb.mean(axis=2, keepdims=True).astype(np.float32)


def cmd_synth(args):
    cfg = _load_config(args.config)
    cam = cfg.camera()
    seed = args.seed if args.seed is not None else cfg.require("scene.seed")
    n = args.frames if args.frames is not None else cfg.require("synth.frames")
    base = cfg.scene_spec(seed=seed)
    frames = make_dataset(base, cam, n, seed, jitter=cfg.scene_jitter())
    os.makedirs(args.out, exist_ok=True)
    labels, raw_files = [], []
    h_samples = cfg.h_samples()
    for i, frame in enumerate(frames):
        cloud_name = f"cloud_{i:03d}.lkpc"
        image_name = f"image_{i:03d}.ppm"
        io.write_cloud(os.path.join(args.out, cloud_name), frame.cloud)
        io.write_ppm(os.path.join(args.out, image_name), frame.image)
        labels.append(to_row_anchors(frame.gt_lanes_2d, h_samples))
        raw_files.append(image_name)
    io.write_labels_jsonl(os.path.join(args.out, "gt.jsonl"), labels, raw_files)
    _log(f"synth: wrote {n} frame(s) to {args.out}")


def cmd_extract(args):
    cfg = _load_config(args.camera)
    cam = cfg.camera()
    extract_cfg = cfg.extract_config()
    h_samples = cfg.h_samples()
    if os.path.isdir(args.cloud):
        paths = sorted(
            glob.glob(os.path.join(args.cloud, "*.lkpc"))
            + glob.glob(os.path.join(args.cloud, "*.csv"))
        )
    else:
        paths = [args.cloud]
    labels, raw_files = [], []
    for k, path in enumerate(paths):
        cloud = io.read_cloud(path)
        lanes = extract_lanes(cloud, cam, extract_cfg, seed=args.seed + k)
        labels.append(to_row_anchors(lanes, h_samples))
        raw_files.append(os.path.basename(path))
    io.write_labels_jsonl(args.out, labels, raw_files)
    _log(f"extract: {len(paths)} cloud(s) -> {args.out}")


def cmd_eval(args):
    cfg = _load_config(args.config)
    preds, _ = io.read_labels_jsonl(args.pred)
    gts, _ = io.read_labels_jsonl(args.gt)
    result = tusimple_eval(
        preds,
        gts,
        pt_thresh_px=cfg.require("eval.pt_thresh_px"),
        lane_acc_thresh=cfg.require("eval.lane_acc_thresh"),
    )
    io.write_json(args.out, result.as_dict())
    _log(f"eval: f1={result.f1:.4f} accuracy={result.accuracy:.4f}")


def _read_frame_images(data_dir):
    paths = sorted(glob.glob(os.path.join(data_dir, "image_*.ppm")))
    return [_gray_image(io.read_ppm(p)) for p in paths], paths


def cmd_train_slc(args):
    cfg = _load_config(args.config)
    images, _ = _read_frame_images(args.data)
    labels_path = args.labels or os.path.join(args.data, "pseudo.jsonl")
    labels, _ = io.read_labels_jsonl(labels_path)
    pseudo = [label.to_lanes() for label in labels]
    state = train_slc(
        images, pseudo, cfg.slc_config(), args.seed, model_cfg=cfg.model_config()
    )
    io.save_state(args.out, state)
    _log(f"train-slc: {len(images)} frame(s), state -> {args.out}")


def _read_domain(data_dir, cam):
    """Frames from a synth output directory (clouds optional)."""
    images, image_paths = _read_frame_images(data_dir)
    gt_path = os.path.join(data_dir, "gt.jsonl")
    gt_labels, _ = io.read_labels_jsonl(gt_path)
    frames = []
    for k, (image, path) in enumerate(zip(images, image_paths)):
        cloud_path = path.replace("image_", "cloud_").replace(".ppm", ".lkpc")
        cloud = io.read_cloud(cloud_path) if os.path.exists(cloud_path) else None
        gt_lanes = gt_labels[k].to_lanes() if k < len(gt_labels) else []
        frames.append(
            FrameSample(
                cloud=cloud, image=image, gt_lanes_2d=gt_lanes, gt_lanes_3d=[], cam=cam
            )
        )
    return frames


def cmd_distill(args):
    cfg = _load_config(args.config)
    cam = cfg.camera()
    source = _read_domain(args.source, cam)
    target = _read_domain(args.target, cam)
    _, report = run_adaptation(source, target, cfg.adaptation_config(), args.seed)
    io.write_json(args.out, report)
    _log(f"distill: student f1={report['f1']:.4f} -> {args.out}")


def _overlay(image_rgb, label, color):
    lanes = label.to_lanes()
    if not lanes:
        return
    h, w = image_rgb.shape[:2]
    mask = rasterize_mask(lanes, h, w, 2).bits.astype(bool)
    for c in range(3):
        image_rgb[..., c][mask] = color[c] / 255.0


def cmd_render(args):
    image = io.read_ppm(args.image).copy()
    for path, color in (
        (args.noisy, COLOR_NOISY),
        (args.refined, COLOR_REFINED),
        (args.gt, COLOR_GT),
    ):
        if path is None:
            continue
        labels, _ = io.read_labels_jsonl(path)
        if args.index >= len(labels):
            raise LaneKitError(f"label file {path} has no frame {args.index}")
        _overlay(image, labels[args.index], color)
    io.write_ppm(args.out, image)
    _log(f"render: -> {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lanekit",
        description="Self-supervised lane detection pipeline on synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic frames")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="point cloud(s) -> pseudo labels")
    p.add_argument("--cloud", required=True, help="cloud file or directory")
    p.add_argument("--camera", default=None, help="config with cam.* keys")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-slc", help="train the label corrector")
    p.add_argument("--data", required=True, help="directory with image_*.ppm")
    p.add_argument("--labels", default=None, help="pseudo label jsonl (default <data>/pseudo.jsonl)")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_slc)

    p = sub.add_parser("distill", help="source -> target adaptation")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="benchmark-protocol metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="overlay labels on a frame image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", default=None)
    p.add_argument("--noisy", default=None)
    p.add_argument("--refined", default=None)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        line = {"error": exc.kind, "message": str(exc)}
        if exc.key:
            line["key"] = exc.key
        print(json.dumps(line, sort_keys=True), file=sys.stderr)
        return 2
    except LaneKitError as exc:
        print(
            json.dumps({"error": exc.kind, "message": str(exc)}, sort_keys=True),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
