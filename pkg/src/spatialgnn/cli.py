"""Command line interface.

Subcommands:

* ``synth-data``  generate a synthetic detector-fusion dataset on disk
* ``train``       train the fusion network on a dataset directory
* ``eval``        score a checkpoint on a split, optionally writing tables
* ``gradcheck``   run the bundled finite-difference gradient suite
* ``report``      render figures and delimited tables from a run directory

Exit codes: 0 success, 1 usage error, 2 data/configuration error,
3 numeric failure (divergence, non-finite values, failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .checks import run_gradcheck_suite
from .config import (ModelConfig, TrainConfig, apply_overrides,
                     parse_config_file)
from .detfusion import (CLASS_NAMES, avg_iou_table, batch_samples,
                        confusion_matrix, load_fusion_dataset, masked_argmax)
from .errors import DataError, NumericError, SpatialGnnError, StageError
from .model import SpatialGnnModel
from .reports import render_report
from .synth import SynthConfig, generate_samples, write_dataset
from .train import evaluate, train

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits with status 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_set(values: list[str]) -> dict:
    out = {}
    for item in values:
        if "=" not in item:
            raise DataError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw.strip()
    return out


def _configs_from_args(args) -> tuple[ModelConfig, TrainConfig]:
    model_cfg = ModelConfig()
    train_cfg = TrainConfig()
    overrides: dict = {}
    if getattr(args, "config", None):
        overrides.update(parse_config_file(args.config))
    if getattr(args, "set", None):
        overrides.update(_parse_set(args.set))
    apply_overrides(model_cfg, train_cfg, overrides)
    model_cfg.validate()
    return model_cfg, train_cfg


def _load_model_from_checkpoint(path) -> SpatialGnnModel:
    arrays, meta = load_checkpoint(path)
    cfg_dict = meta.get("model_config")
    if cfg_dict is None:
        raise DataError(f"{path}: checkpoint has no model configuration")
    model = SpatialGnnModel(ModelConfig.from_dict(cfg_dict))
    model.load_arrays(arrays)
    return model


def _graph_logits(model: SpatialGnnModel, samples, batch_size: int) -> np.ndarray:
    chunks = []
    for start in range(0, len(samples), batch_size):
        batch, _ = batch_samples(samples[start:start + batch_size])
        bundle = model.forward(batch, "eval")
        chunks.append(bundle.graph_logits.data)
    return np.concatenate(chunks, axis=0)


def _selected_classes(model: SpatialGnnModel, samples, batch_size: int) -> list[int]:
    logits = _graph_logits(model, samples, batch_size)
    return [masked_argmax(logits[i], sorted(set(s.node_classes)))
            for i, s in enumerate(samples)]


def _cmd_synth_data(args) -> int:
    balance = None
    if not args.free:
        parts = [float(v) for v in args.balance.split(",")]
        balance = tuple(parts)
    cfg = SynthConfig(samples=args.samples, image_size=args.image_size,
                      seed=args.seed, class_balance=balance,
                      yolo_noise=args.yolo_noise, retina_noise=args.retina_noise,
                      jitter=args.jitter, pixel_noise=args.pixel_noise,
                      miss_rate=args.miss_rate, val_frac=args.val_frac,
                      test_frac=args.test_frac)
    cfg.validate()
    samples = generate_samples(cfg)
    manifest = write_dataset(samples, args.out, cfg)
    counts = np.bincount([s.label for s in samples], minlength=3)
    print(f"wrote {len(samples)} samples to {args.out}")
    print(f"splits: {manifest['splits']}")
    print("label counts: " + ", ".join(
        f"{name}={int(c)}" for name, c in zip(CLASS_NAMES, counts)))
    return 0


def _cmd_train(args) -> int:
    model_cfg, train_cfg = _configs_from_args(args)
    train_samples = load_fusion_dataset(args.data, "train", node_size=args.node_size)
    try:
        val_samples = load_fusion_dataset(args.data, "val", node_size=args.node_size)
    except DataError:
        val_samples = []
    model = SpatialGnnModel(model_cfg)
    log = None if args.quiet else print
    state = train(model, train_samples, val_samples, train_cfg,
                  out_dir=args.out, resume_from=args.resume, log=log)
    last_train = next((m for m in reversed(state.metrics)
                       if m["split"] == "train"), None)
    print(f"trained {state.epochs_run} epochs in {state.wall_seconds:.1f}s"
          + (" (early stop)" if state.early_stopped else ""))
    if last_train is not None:
        print(f"final train accuracy {last_train['accuracy']:.4f}")
    if state.best_val_loss != float("inf"):
        print(f"best validation loss {state.best_val_loss:.6f}")
    print(f"artifacts in {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = _load_model_from_checkpoint(args.ckpt)
    samples = load_fusion_dataset(args.data, args.split, node_size=args.node_size)
    result = evaluate(model, samples, batch_size=args.batch_size)
    print(f"split={args.split} n={result.count} "
          f"loss={result.loss:.6f} accuracy={result.accuracy:.4f}")
    if args.out:
        targets = np.array([s.target for s in samples])
        counts = confusion_matrix(result.preds, targets, len(CLASS_NAMES))
        selected = _selected_classes(model, samples, args.batch_size)
        rows = avg_iou_table(samples, selected)
        written = render_report(args.out, confusion=counts,
                                class_names=CLASS_NAMES, iou_rows=rows)
        for name in written:
            print(f"wrote {Path(args.out) / name}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = run_gradcheck_suite(epsilon=args.epsilon, only=args.only)
    if not report.rows:
        raise DataError(f"no gradient-check cases match {args.only!r}")
    for line in report.format_lines(args.tolerance):
        print(line)
    status = "PASS" if report.passed(args.tolerance) else "FAIL"
    print(f"gradcheck {status}: {len(report.rows)} tensors, "
          f"max rel err {report.max_rel_err:.3e} (tolerance {args.tolerance:g})")
    if status == "FAIL":
        raise NumericError("gradient check exceeded tolerance")
    return 0


def _cmd_report(args) -> int:
    run_dir = Path(args.run)
    out_dir = Path(args.out) if args.out else run_dir / "report"
    metrics_path = run_dir / "metrics.jsonl"
    if not metrics_path.exists():
        raise DataError(f"{metrics_path}: metrics log not found")
    confusion = None
    iou_rows = None
    if args.data:
        ckpt = Path(args.ckpt) if args.ckpt else run_dir / "best.ckpt"
        model = _load_model_from_checkpoint(ckpt)
        samples = load_fusion_dataset(args.data, args.split, node_size=args.node_size)
        result = evaluate(model, samples, batch_size=args.batch_size)
        targets = np.array([s.target for s in samples])
        confusion = confusion_matrix(result.preds, targets, len(CLASS_NAMES))
        selected = _selected_classes(model, samples, args.batch_size)
        iou_rows = avg_iou_table(samples, selected)
        print(f"eval split={args.split} n={result.count} "
              f"loss={result.loss:.6f} accuracy={result.accuracy:.4f}")
    written = render_report(out_dir, metrics_path=metrics_path,
                            confusion=confusion,
                            class_names=CLASS_NAMES if confusion is not None else None,
                            iou_rows=iou_rows)
    for name in written:
        print(f"wrote {out_dir / name}")
    return 0


def _add_common_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted config override, e.g. model.gnn.layers=3")


def build_parser() -> _Parser:
    parser = _Parser(prog="spatialgnn",
                     description="Spatial feature-map graph network toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="generate a synthetic fusion dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--image-size", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--balance", default="0.2,0.2,0.6",
                   help="comma class fractions (YOLO,Retina,Union)")
    p.add_argument("--free", action="store_true",
                   help="ignore --balance; label whatever the noise produces")
    p.add_argument("--yolo-noise", type=float, default=1.0)
    p.add_argument("--retina-noise", type=float, default=1.0)
    p.add_argument("--jitter", type=float, default=0.02)
    p.add_argument("--pixel-noise", type=float, default=4.0)
    p.add_argument("--miss-rate", type=float, default=0.0)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--test-frac", type=float, default=0.1)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--node-size", type=int, default=128)
    p.add_argument("--resume", help="resume from a last.ckpt")
    p.add_argument("--quiet", action="store_true")
    _add_common_model_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--node-size", type=int, default=128)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", help="also write confusion/IoU tables and figures here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--only", help="run only cases whose name contains this")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("report", help="render figures and tables for a run")
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--out", help="report directory (default RUN/report)")
    p.add_argument("--data", help="dataset directory for confusion/IoU sections")
    p.add_argument("--split", default="test")
    p.add_argument("--ckpt", help="checkpoint (default RUN/best.ckpt)")
    p.add_argument("--node-size", type=int, default=128)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpatialGnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        numeric = isinstance(exc, NumericError) or (
            isinstance(exc, StageError) and isinstance(exc.original, NumericError))
        return 3 if numeric else 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
