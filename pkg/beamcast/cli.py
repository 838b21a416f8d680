#!/usr/bin/env python3
"""
Command-line interface for beamcast
Dataset generation, training, evaluation, learning-rate sweeps and model inspection
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional

import numpy as np

from beamcast import __version__
from beamcast.airsim import generate_dataset, label_histogram, load_dataset, save_previews, write_dataset
from beamcast.beamnet import count_parameters, describe_shapes
from beamcast.checkpoint import Checkpoint, describe, load_checkpoint, save_checkpoint
from beamcast.config import PRESETS, RunConfig, load_run_config
from beamcast.errors import BeamcastError, ConfigurationError
from beamcast.harness import (
    SweepArm,
    SweepTable,
    TrainResult,
    check_compatibility,
    evaluate,
    lr_sweep,
    train,
)
from beamcast.metrics import DEFAULT_TOPK, confusion_to_csv, confusion_topn, read_epoch_records
from beamcast.path_utils import PathValidator, atomic_write_text
from beamcast.pipeline import SplitSpec, split_dataset

logger = logging.getLogger("beamcast")


def _status(symbol: str, message: str) -> None:
    print(f"{symbol} {message}", file=sys.stderr)


def _parse_list(text: str, cast: type, name: str) -> list[Any]:
    try:
        values = [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"could not parse {text!r}", name)
    if not values:
        raise ConfigurationError("needs at least one value", name)
    return values


def _require_output_dir(path: str, force: bool) -> Path:
    ok, message = PathValidator.validate_output_directory(path, force=force)
    if not ok:
        raise ConfigurationError(message, "out")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path: str, name: str) -> Path:
    ok, message = PathValidator.validate_file(path)
    if not ok:
        raise ConfigurationError(message, name)
    return Path(path)


def _run_config(args: argparse.Namespace) -> RunConfig:
    """Preset + config file + command-line overrides, validated as a whole"""
    cfg = load_run_config(getattr(args, "config", None), getattr(args, "preset", None))
    overrides: dict[str, Any] = {}
    train_updates: dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
        train_updates["seed"] = args.seed
    if getattr(args, "samples", None) is not None:
        overrides["samples"] = args.samples
    if getattr(args, "epochs", None) is not None:
        train_updates["epochs"] = args.epochs
        if cfg.train.milestones and cfg.train.milestones[-1] >= args.epochs:
            train_updates["milestones"] = tuple(m for m in cfg.train.milestones if m < args.epochs)
    if getattr(args, "lr", None) is not None:
        train_updates["lr"] = args.lr
    if train_updates:
        overrides["train"] = dataclasses.replace(cfg.train, **train_updates)

    model, radio, camera = cfg.model, cfg.radio, cfg.camera
    if getattr(args, "image_size", None) is not None:
        model = dataclasses.replace(model, image_size=args.image_size)
        camera = dataclasses.replace(camera, image_size=args.image_size)
    if getattr(args, "num_beams", None) is not None:
        model = dataclasses.replace(model, num_beams=args.num_beams)
        radio = dataclasses.replace(radio, num_beams=args.num_beams)
    if getattr(args, "num_antennas", None) is not None:
        radio = dataclasses.replace(radio, num_antennas=args.num_antennas)
    return dataclasses.replace(cfg, model=model, radio=radio, camera=camera, **overrides)


# ============================================================================ commands
def gen_data_command(args: argparse.Namespace) -> int:
    """Generate a synthetic dataset directory"""
    cfg = _run_config(args)
    out = _require_output_dir(args.out, args.force)

    dataset = generate_dataset(cfg.samples, cfg.scene, cfg.radio, cfg.camera, seed=cfg.seed)
    write_dataset(out, dataset)
    _status("✓", f"Wrote {len(dataset)} samples to {out}")

    hist = label_histogram(dataset.labels, cfg.radio.num_beams)
    used = int(np.count_nonzero(hist))
    top = np.argsort(-hist, kind="stable")[:5]
    print(f"beams used: {used}/{cfg.radio.num_beams}")
    print("most frequent: " + ", ".join(f"{int(q)}({int(hist[q])})" for q in top if hist[q]))
    if used < cfg.radio.num_beams // 2:
        _status("⚠", f"Only {used} of {cfg.radio.num_beams} beams occur; widen the flight volume for better coverage")

    if args.preview:
        written = save_previews(dataset, out / "preview", args.preview)
        _status("✓", f"Wrote {len(written)} preview images to {out / 'preview'}")
    return 0


def _checkpoint_writer(out: Path, cfg: RunConfig):
    def write(result: TrainResult) -> None:
        ckpt = Checkpoint(result.params, result.scaler, result.last_epoch, cfg.train, result.adam_state)
        save_checkpoint(out / f"checkpoint_epoch{result.last_epoch + 1:04d}.bcp", ckpt)

    return write


def _finish_run(out: Path, cfg: RunConfig, result: TrainResult) -> None:
    ckpt = Checkpoint(result.params, result.scaler, result.last_epoch, cfg.train, result.adam_state)
    save_checkpoint(out / "final.bcp", ckpt)
    result.report.write(out)


def train_command(args: argparse.Namespace) -> int:
    """Train on a dataset directory and write checkpoints and metrics"""
    cfg = _run_config(args)
    model_cfg = cfg.model
    resume = None
    if args.resume:
        ckpt = load_checkpoint(_require_file(args.resume, "resume"))
        if ckpt.model_config != model_cfg:
            _status("⚠", "Using the model configuration stored in the checkpoint")
            model_cfg = ckpt.model_config
        resume = ckpt.resume_state()

    dataset = load_dataset(args.data)
    check_compatibility(model_cfg, dataset)
    out = _require_output_dir(args.out, args.force or bool(args.resume))
    atomic_write_text(out / "config.json", cfg.to_json())

    result = train(model_cfg, cfg.train, dataset, resume=resume, on_checkpoint=_checkpoint_writer(out, cfg))
    if resume is not None:
        result.report.prepend_history(read_epoch_records(out / "metrics.jsonl"), resume.epoch + 1)
    _finish_run(out, cfg, result)

    final = result.report.final
    _status("✓", f"Training finished after epoch {result.last_epoch + 1}; checkpoint {out / 'final.bcp'}")
    if final is not None:
        _print_topk("test", final.num_samples, final.topk)
    return 0


def _print_topk(split: str, n: int, topk: dict[int, float]) -> None:
    ks = sorted(topk)
    print("split\tn\t" + "\t".join(f"top{k}" for k in ks))
    print(f"{split}\t{n}\t" + "\t".join(f"{topk[k]:.4f}" for k in ks))


def eval_command(args: argparse.Namespace) -> int:
    """Evaluate a checkpoint: Top-K table to stdout, confusion matrix to CSV"""
    ckpt = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    dataset = load_dataset(args.data)
    check_compatibility(ckpt.model_config, dataset)
    q = ckpt.model_config.num_beams
    if args.topk is None:
        ks = [k for k in DEFAULT_TOPK if k <= q]
    else:
        ks = _parse_list(args.topk, int, "topk")
        if any(not 1 <= k <= q for k in ks):
            raise ConfigurationError(f"values must be in [1, {q}], got {ks}", "topk")

    if args.split == "all":
        indices = np.arange(len(dataset))
    else:
        train_cfg = ckpt.train_config
        fraction = train_cfg.train_fraction if train_cfg else 0.8
        seed = train_cfg.seed if train_cfg else 0
        _, indices = split_dataset(len(dataset), SplitSpec(fraction, seed))

    result = evaluate(ckpt.params, dataset, indices, ckpt.scaler, ks)
    _print_topk(args.split, result.num_samples, result.topk)

    if args.confusion_top:
        summary = confusion_topn(result.confusion, min(args.confusion_top, q))
        print("\ntrue\tcount\t" + "\t".join(str(int(c)) for c in summary.classes) + "\toutside")
        for cls, count, row, outside in zip(summary.classes, summary.counts, summary.percentages, summary.outside):
            print(f"{int(cls)}\t{int(count)}\t" + "\t".join(f"{v:.1f}" for v in row) + f"\t{outside:.1f}")

    if args.confusion_out:
        path = atomic_write_text(args.confusion_out, confusion_to_csv(result.confusion))
        _status("✓", f"Confusion matrix written to {path}")
    return 0


def sweep_command(args: argparse.Namespace) -> int:
    """Train one arm per learning rate and tabulate final Top-1/Top-3"""
    cfg = _run_config(args)
    lrs = _parse_list(args.lrs, float, "lrs")
    if len(set(lrs)) != len(lrs):
        _status("⚠", "Duplicate learning rates ignored")
    dataset = load_dataset(args.data)
    check_compatibility(cfg.model, dataset)
    out = _require_output_dir(args.out, args.force)
    atomic_write_text(out / "config.json", cfg.to_json())

    def write_arm(arm: SweepArm) -> None:
        arm_dir = out / f"lr_{arm.lr:g}"
        arm_dir.mkdir(parents=True, exist_ok=True)
        if arm.result is not None:
            arm_cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, lr=arm.lr))
            _finish_run(arm_dir, arm_cfg, arm.result)
            _status("✓", f"lr={arm.lr:g}: top1 {arm.final_topk.get(1, float('nan')):.4f}")
        else:
            atomic_write_text(arm_dir / "diverged.json", json.dumps(arm.row(), indent=2) + "\n")
            _status("✗", f"lr={arm.lr:g}: {arm.error}")

    table = SweepTable(lr_sweep(cfg.model, cfg.train, dataset, lrs, on_arm_end=write_arm))
    csv_text = table.to_csv()
    atomic_write_text(out / "sweep.csv", csv_text)
    print(csv_text, end="")
    return 0


def inspect_command(args: argparse.Namespace) -> int:
    """Show the shape ladder and parameter count of a configuration (no training)"""
    if args.checkpoint:
        ckpt = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
        model = ckpt.model_config
        print(json.dumps(describe(ckpt), indent=2))
    else:
        model = _run_config(args).model

    print(f"{'stage':<20} shape")
    for name, shape in describe_shapes(model):
        print(f"{name:<20} {list(shape)}")
    print(f"parameters: {count_parameters(model):,}")
    return 0


# ============================================================================ parser
def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="Run configuration JSON file")
    parser.add_argument("--preset", choices=sorted(PRESETS), default=None, help="Start from a preset")
    parser.add_argument("--seed", type=int, default=None, help="Seed for data, split, init and training")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamcast",
        description="beamcast - multimodal UAV beam prediction",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  beamcast gen-data --out data/toy --preset toy --seed 7      # Synthetic dataset
  beamcast train --data data/toy --preset toy --out runs/toy   # Train + checkpoints
  beamcast eval --checkpoint runs/toy/final.bcp --data data/toy --topk 1,3,5
  beamcast sweep --data data/toy --preset toy-sweep --out runs/sweep --lrs 1e-3,1e-4,1e-5
  beamcast inspect --preset full                              # Shape ladder, no training

Environment:
  BEAMCAST_REFERENCE=1   single-threaded, bit-reproducible mode
  BEAMCAST_WORKERS=N     dataset generation workers
        """,
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    parser.add_argument("--version", action="version", version=f"beamcast {__version__}")
    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    # gen-data
    gen = subparsers.add_parser("gen-data", help="Generate a synthetic dataset")
    gen.add_argument("--out", required=True, help="Output dataset directory")
    gen.add_argument("--samples", type=int, default=None, help="Number of samples")
    gen.add_argument("--image-size", type=int, default=None, help="Rendered image side in pixels")
    gen.add_argument("--num-beams", type=int, default=None, help="Codebook size Q")
    gen.add_argument("--num-antennas", type=int, default=None, help="Array size M")
    gen.add_argument("--force", action="store_true", help="Write into a non-empty directory")
    gen.add_argument("--preview", type=int, default=0, metavar="N", help="Also save the first N images as PNG")
    _add_config_args(gen)
    gen.set_defaults(func=gen_data_command)

    # train
    tr = subparsers.add_parser("train", help="Train a model")
    tr.add_argument("--data", required=True, help="Dataset directory")
    tr.add_argument("--out", required=True, help="Run directory for checkpoints and metrics")
    tr.add_argument("--resume", default=None, help="Continue from this checkpoint")
    tr.add_argument("--epochs", type=int, default=None, help="Override the number of epochs")
    tr.add_argument("--lr", type=float, default=None, help="Override the initial learning rate")
    tr.add_argument("--force", action="store_true", help="Write into a non-empty directory")
    _add_config_args(tr)
    tr.set_defaults(func=train_command)

    # eval
    ev = subparsers.add_parser("eval", help="Evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True, help="Checkpoint file")
    ev.add_argument("--data", required=True, help="Dataset directory")
    ev.add_argument("--topk", default=None, help="Comma-separated K values (default: 1,3,5 up to Q)")
    ev.add_argument("--split", choices=("test", "all"), default="test", help="Samples to evaluate")
    ev.add_argument("--confusion-out", default=None, help="Write the confusion matrix CSV here")
    ev.add_argument("--confusion-top", type=int, default=0, metavar="N", help="Print the N most populous classes")
    ev.set_defaults(func=eval_command)

    # sweep
    sw = subparsers.add_parser("sweep", help="Learning-rate sweep")
    sw.add_argument("--data", required=True, help="Dataset directory")
    sw.add_argument("--out", required=True, help="Sweep directory (one subdirectory per lr)")
    sw.add_argument("--lrs", default="1e-3,1e-4,1e-5", help="Comma-separated learning rates")
    sw.add_argument("--epochs", type=int, default=None, help="Override the number of epochs")
    sw.add_argument("--force", action="store_true", help="Write into a non-empty directory")
    _add_config_args(sw)
    sw.set_defaults(func=sweep_command)

    # inspect
    ins = subparsers.add_parser("inspect", help="Show shapes and parameter count")
    ins.add_argument("--checkpoint", default=None, help="Describe a checkpoint instead of a config")
    _add_config_args(ins)
    ins.set_defaults(func=inspect_command)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """
    Main CLI entry point

    Exit codes: 0 success, 2 validation/user error, 3 numerical failure
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if not args.command:
        parser.print_help()
        return 0

    try:
        return args.func(args)
    except BeamcastError as e:
        _status("✗", f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
