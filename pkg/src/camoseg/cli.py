"""Command-line interface.

Subcommands: ``synth`` (generate a synthetic dataset), ``train``, ``eval``
(score prediction maps against masks), ``infer`` (run a checkpoint over a
directory of images). Every run writes a ``manifest.json`` next to its
outputs recording the command, the fully resolved configuration, the seed,
artifact paths, and wall-clock duration.

Exit codes: 0 success, 2 invalid flags/config, 3 missing or malformed
input/output paths, 4 non-finite training loss, 5 checkpoint/config mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import cv2
import numpy as np
import torch

from .config import (
    ABLATIONS,
    PRESETS,
    LossWeights,
    NetworkConfig,
    TrainConfig,
    from_flat,
    read_flat_config,
    to_flat,
)
from .data import preprocess
from .decoder import binarize
from .errors import (
    CheckpointError,
    ConfigError,
    DataLayoutError,
    NonFiniteLossError,
    ShapeMismatchError,
)
from .metrics import E_VARIANTS, evaluate_directory
from .model import build_model
from .synth import SynthConfig, synthesize
from .training import Checkpoint, train


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int,
                    artifacts: list, started: float) -> Path:
    manifest = {
        "command": command,
        "config": {k: config[k] for k in sorted(config)},
        "seed": seed,
        "artifacts": [str(a) for a in artifacts],
        "duration_sec": round(time.monotonic() - started, 3),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _resolve_train_config(args) -> tuple[NetworkConfig, LossWeights, TrainConfig, dict]:
    flat = to_flat(NetworkConfig(), LossWeights(), TrainConfig())
    flat.update(PRESETS[args.preset])
    if args.config:
        flat.update(read_flat_config(args.config))
    if args.ablation:
        flat.update(ABLATIONS[args.ablation])
    if args.seed is not None:
        flat["train.seed"] = args.seed
    if args.size is not None:
        flat["model.input_size"] = args.size
    net, lw, tc = from_flat(flat)
    return net, lw, tc, to_flat(net, lw, tc)


def cmd_synth(args) -> int:
    started = time.monotonic()
    if args.size < 32 or args.size % 32 != 0:
        raise ConfigError(f"--size must be a positive multiple of 32, got {args.size}")
    cfg = SynthConfig(
        num_images=args.n,
        image_size=args.size,
        objects_per_image=(args.min_objects, args.max_objects),
        contrast_delta=args.contrast_delta,
        texture_scale=args.texture_scale,
        seed=args.seed,
    )
    out = Path(args.out)
    ids = synthesize(cfg, out)
    config = {
        "synth.num_images": cfg.num_images,
        "synth.image_size": cfg.image_size,
        "synth.objects_per_image": list(cfg.objects_per_image),
        "synth.contrast_delta": cfg.contrast_delta,
        "synth.texture_scale": cfg.texture_scale,
        "synth.seed": cfg.seed,
    }
    artifacts = [out / "images", out / "masks", out / "edges"]
    _write_manifest(out, "synth", config, cfg.seed, artifacts, started)
    print(f"wrote {len(ids)} samples to {out}")
    return 0


def cmd_train(args) -> int:
    started = time.monotonic()
    net, lw, tc, flat = _resolve_train_config(args)
    out = Path(args.out)
    result = train(net, lw, tc, args.data, out)
    _write_manifest(
        out, "train", flat, tc.seed, [result.checkpoint_path, result.log_path], started
    )
    print(
        f"trained {result.steps} steps; best monitored loss {result.best_val:.6f}; "
        f"checkpoint {result.checkpoint_path}"
    )
    return 0


def cmd_eval(args) -> int:
    started = time.monotonic()
    report = evaluate_directory(args.pred, args.gt, e_variant=args.e_variant)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "metrics.csv"
    json_path = out / "metrics.json"
    report.to_csv(csv_path)
    report.to_json(json_path)
    config = {
        "eval.pred": str(args.pred),
        "eval.gt": str(args.gt),
        "eval.e_variant": args.e_variant,
    }
    _write_manifest(out, "eval", config, 0, [csv_path, json_path], started)
    head = report.headline()
    print(
        f"evaluated {report.evaluated} images (skipped {len(report.skipped)}): "
        f"S={head['s_alpha']:.4f} E={head['e_phi']:.4f} "
        f"Fw={head['f_w']:.4f} Fm={head['f_m']:.4f} MAE={head['mae']:.4f}"
    )
    return 0


def cmd_infer(args) -> int:
    started = time.monotonic()
    ckpt = Checkpoint.load(args.checkpoint)
    if args.config:
        overrides = read_flat_config(args.config)
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section != "model":
                continue
            if name in ckpt.network and ckpt.network[name] != value:
                raise CheckpointError(
                    f"config overrides {key}={value!r} but the checkpoint was "
                    f"trained with {ckpt.network[name]!r}"
                )
    cfg = ckpt.network_config()
    size = args.size if args.size is not None else cfg.input_size
    if size % 32 != 0 or size <= 0:
        raise ConfigError(f"--size must be a positive multiple of 32, got {size}")
    threshold = args.threshold if args.threshold is not None else cfg.mask_threshold
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"--threshold must lie strictly in (0, 1), got {threshold}")

    data = Path(args.data)
    if not data.is_dir():
        raise DataLayoutError(f"input directory {data} does not exist")
    images = sorted(
        p for p in data.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not images:
        raise DataLayoutError(f"no images found in {data}")

    model = build_model(cfg)
    ckpt.load_into(model)
    model.eval()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    with torch.no_grad():
        for path in images:
            raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
            if raw is None:
                raise DataLayoutError(f"could not read image {path}")
            rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
            x = torch.from_numpy(preprocess(rgb, size))[None]
            prob = torch.sigmoid(model(x).decode.p3)[0, 0].numpy()
            h, w = rgb.shape[:2]
            prob_full = cv2.resize(prob, (w, h), interpolation=cv2.INTER_LINEAR)
            prob_png = np.rint(np.clip(prob_full, 0.0, 1.0) * 255.0).astype(np.uint8)
            mask_png = ((prob_full > threshold) * 255).astype(np.uint8)
            prob_path = out / f"{path.stem}.png"
            mask_path = out / f"{path.stem}_mask.png"
            cv2.imwrite(str(prob_path), prob_png)
            cv2.imwrite(str(mask_path), mask_png)
            artifacts.extend([prob_path, mask_path])
    config = {f"model.{k}": v for k, v in ckpt.network.items()}
    config.update({"infer.size": size, "infer.threshold": threshold})
    _write_manifest(out, "infer", config, ckpt.train.get("seed", 0), artifacts, started)
    print(f"wrote {len(images)} probability/mask pairs to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camoseg", description="Edge-guided camouflaged object segmentation"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic camouflage dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8, help="number of images")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contrast-delta", type=float, default=0.3)
    p.add_argument("--texture-scale", type=float, default=0.0625)
    p.add_argument("--min-objects", type=int, default=1)
    p.add_argument("--max-objects", type=int, default=3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="flat key = value config file")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--ablation", choices=sorted(ABLATIONS), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--size", type=int, default=None, help="model input size")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score prediction maps against masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--e-variant", choices=list(E_VARIANTS), default="adaptive")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run a checkpoint over a directory of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ShapeMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataLayoutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.unmatched:
            print(f"unmatched: {exc.unmatched}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
