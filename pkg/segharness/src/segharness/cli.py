"""seg: train / infer / experiment entry points."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import niftiio
from .experiment import SuiteConfig, run_experiment
from .infer import infer
from .patches import extract_all_views
from .train import TrainConfig, load_weights, save_weights, train

log = logging.getLogger("segharness")


def cmd_train(args) -> int:
    cfg = json.loads(Path(args.config).read_text())
    samples = []
    for image_path, labels_path in cfg["volumes"]:
        image, _ = niftiio.read_volume(image_path)
        labels, _ = niftiio.read_volume(labels_path)
        samples.extend(extract_all_views(image, labels, stride=cfg.get("stride", 32)))
    config = TrainConfig(
        name=cfg["name"],
        epochs=cfg.get("epochs", 4),
        base_lr=cfg.get("base_lr", 1e-3),
        lr_decay=cfg.get("lr_decay", 0.85),
        seed=cfg.get("seed", 0),
        init_weights=cfg.get("init_weights"),
    )
    model, history = train(config, samples)
    out = Path(cfg.get("out", f"{config.name}.pt"))
    save_weights(out, model, config, history)
    log.info("wrote %s (final train loss %.4f)", out, history["train_loss"][-1])
    return 0


def cmd_infer(args) -> int:
    model = load_weights(args.weights)
    image, affine = niftiio.read_volume(args.image)
    pred = infer(image, model, stride=args.stride)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    niftiio.write_volume(out, pred.astype(np.uint8), affine)
    log.info("wrote %s", out)
    return 0


def cmd_experiment(args) -> int:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    raw.setdefault("seeds", [0, 1, 2, 3, 4])
    raw["seeds"] = tuple(raw["seeds"])
    cfg = SuiteConfig(**raw)
    summary = run_experiment(cfg)
    print(json.dumps(summary["seeds"], indent=2, sort_keys=True))
    print(f"DA_FaBiAN_Baseline beats Baseline in {summary['da_baseline_wins']}"
          f"/{len(cfg.seeds)} seeds; DSC table: {summary['dsc_csv']}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = argparse.ArgumentParser(prog="seg", description="Patch-based tissue segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train")
    p_train.add_argument("--config", required=True)
    p_infer = sub.add_parser("infer")
    p_infer.add_argument("--weights", required=True)
    p_infer.add_argument("--image", required=True)
    p_infer.add_argument("-o", "--output", required=True)
    p_infer.add_argument("--stride", type=int, default=32)
    p_exp = sub.add_parser("experiment")
    p_exp.add_argument("--config", default=None)

    args = parser.parse_args(argv)
    try:
        return {"train": cmd_train, "infer": cmd_infer, "experiment": cmd_experiment}[
            args.command
        ](args)
    except Exception as exc:  # noqa: BLE001 - single user-facing error path
        print(f"seg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
