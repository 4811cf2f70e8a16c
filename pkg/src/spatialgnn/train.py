"""Training and evaluation loops.

Determinism contract: with a fixed seed, two runs produce byte-identical
metrics logs, and a run interrupted at any epoch boundary and resumed from
``last.ckpt`` finishes bit-identical to the uninterrupted run (exact in
double precision). That works because every random draw is a pure function
of the seed plus loop counters - the epoch shuffle of ``(seed, epoch)``,
dropout masks of ``(seed, layer, global step)`` - and the checkpoint restores
parameters, batch-norm buffers and Adam moments exactly.

``train`` accepts either plain graphs or detection-fusion samples; fusion
samples additionally carry per-node IoU targets for the IoU regression head.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .detfusion import DetectionGraphSample, batch_samples
from .errors import DataError, NumericError
from .graph import Graph, SHUFFLE_DOMAIN, batch_merge
from .model import SpatialGnnModel, compute_loss
from .optim import Adam
from .tensor import Tape

__all__ = ["EvalResult", "TrainState", "evaluate", "train",
           "save_train_checkpoint", "restore_train_checkpoint"]

TrainData = Union[Sequence[Graph], Sequence[DetectionGraphSample]]


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    count: int
    preds: np.ndarray
    targets: np.ndarray


@dataclass
class TrainState:
    epochs_run: int = 0
    global_step: int = 0
    best_val_loss: float = float("inf")
    early_stopped: bool = False
    metrics: list[dict] = field(default_factory=list)
    wall_seconds: float = 0.0


def _is_fusion(data: TrainData) -> bool:
    return bool(data) and isinstance(data[0], DetectionGraphSample)


def _merge(data: TrainData, idx: np.ndarray):
    """Batch selected samples; returns (GraphBatch, per-node IoU or None)."""
    subset = [data[int(i)] for i in idx]
    if _is_fusion(subset if subset else data):
        return batch_samples(subset)
    return batch_merge(subset), None


def _batch_predictions(bundle) -> tuple[np.ndarray, np.ndarray]:
    """Predicted vs true classes at the supervised level of the bundle."""
    if bundle.graph_logits is not None and bundle.graph_labels is not None:
        return bundle.graph_logits.data.argmax(axis=1), bundle.graph_labels
    if bundle.node_labels is None:
        raise DataError("batch carries no labels to score against")
    return bundle.node_logits.data.argmax(axis=1), bundle.node_labels


def evaluate(model: SpatialGnnModel, data: TrainData, batch_size: int = 32) -> EvalResult:
    """Eval-mode pass over ``data`` in stored order; loss plus accuracy."""
    if not data:
        raise DataError("evaluate called on an empty dataset")
    total_loss = 0.0
    preds_all, targets_all = [], []
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        batch, ious = _merge(data, idx)
        bundle = model.forward(batch, "eval")
        loss = compute_loss(bundle, model.cfg.loss, node_iou=ious)
        if not np.isfinite(loss.item()):
            raise NumericError("non-finite evaluation loss")
        preds, targets = _batch_predictions(bundle)
        total_loss += loss.item() * len(preds)
        preds_all.append(preds)
        targets_all.append(targets)
    preds = np.concatenate(preds_all)
    targets = np.concatenate(targets_all)
    n = len(preds)
    return EvalResult(loss=total_loss / n,
                      accuracy=float((preds == targets).mean()),
                      count=n, preds=preds, targets=targets)


def save_train_checkpoint(path, model: SpatialGnnModel, optimizer: Adam,
                          epoch: int, global_step: int, best_val_loss: float) -> None:
    arrays: dict[str, np.ndarray] = {}
    arrays.update({k: v.data for k, v in model.params().items()})
    arrays.update(model.buffers())
    arrays.update(optimizer.state_arrays())
    meta = {
        "kind": "train-state",
        "epoch": int(epoch),
        "global_step": int(global_step),
        "adam_t": int(optimizer.t),
        "best_val_loss": float(best_val_loss),
        "model_config": model.cfg.to_dict(),
    }
    save_checkpoint(path, arrays, meta)


def restore_train_checkpoint(path, model: SpatialGnnModel,
                             optimizer: Optional[Adam] = None) -> dict:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "train-state":
        raise DataError(f"{path}: not a training checkpoint")
    saved_cfg = meta.get("model_config")
    if saved_cfg is not None and saved_cfg != model.cfg.to_dict():
        raise DataError(f"{path}: checkpoint was written for a different model config")
    model.load_arrays(arrays)
    if optimizer is not None:
        optimizer.load_state_arrays(arrays, meta.get("adam_t", 0))
    return meta


def _metrics_line(epoch: int, split: str, loss: float, accuracy: float) -> str:
    return json.dumps({"epoch": epoch, "split": split,
                       "loss": float(loss), "accuracy": float(accuracy)})


def train(model: SpatialGnnModel, train_data: TrainData, val_data: TrainData,
          cfg: TrainConfig, out_dir=None, resume_from=None,
          log: Optional[Callable[[str], None]] = None) -> TrainState:
    """Run the optimization loop; returns the final state.

    With ``out_dir`` set, writes ``metrics.jsonl`` (one record per split per
    epoch), ``run_meta.json``, a rolling ``last.ckpt`` and the best-validation
    ``best.ckpt``. ``resume_from`` restores a ``last.ckpt`` and continues
    until ``cfg.epochs`` total epochs have run. Zero epochs is a no-op that
    returns the untouched initial state.
    """
    if not train_data:
        raise DataError("train called with no training data")
    if cfg.batch_size < 1:
        raise DataError("batch_size must be >= 1")

    params = model.params()
    optimizer = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                     eps=cfg.adam_eps)
    state = TrainState()
    start_epoch = 0
    if resume_from is not None:
        meta = restore_train_checkpoint(resume_from, model, optimizer)
        start_epoch = meta["epoch"]
        state.global_step = meta["global_step"]
        state.best_val_loss = meta["best_val_loss"]
        state.epochs_run = start_epoch

    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        hw = model.output_hw(train_data[0].graph.node_features.shape[2]
                             if _is_fusion(train_data)
                             else train_data[0].node_features.shape[2],
                             train_data[0].graph.node_features.shape[3]
                             if _is_fusion(train_data)
                             else train_data[0].node_features.shape[3])
        run_meta = {
            "model_config": model.cfg.to_dict(),
            "train_config": cfg.to_dict(),
            "train_samples": len(train_data),
            "val_samples": len(val_data) if val_data else 0,
            "gnn_feature_hw": [hw[0], hw[1]],
            "pool_stages": hw[2],
            "assumptions": {
                "batch_size": cfg.batch_size,
                "weight_decay": 0.0,
                "loss_reduction": "mean over samples",
            },
        }
        with open(out_dir / "run_meta.json", "w", encoding="utf-8") as fh:
            json.dump(run_meta, fh, indent=2, sort_keys=True)
        metrics_fh = open(out_dir / "metrics.jsonl", "a" if resume_from else "w",
                          encoding="utf-8")

    def emit(line: str) -> None:
        state.metrics.append(json.loads(line))
        if metrics_fh is not None:
            metrics_fh.write(line + "\n")
            metrics_fh.flush()
        if log is not None:
            log(line)

    seed = model.cfg.seed
    n = len(train_data)
    t0 = time.perf_counter()
    try:
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            order = np.random.default_rng([seed, SHUFFLE_DOMAIN, epoch]).permutation(n)
            loss_sum = 0.0
            correct = 0
            seen = 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                batch, ious = _merge(train_data, idx)
                with Tape() as tape:
                    bundle = model.forward(batch, "train", step=state.global_step)
                    loss = compute_loss(bundle, model.cfg.loss, node_iou=ious)
                tape.backward(loss)
                optimizer.step()
                optimizer.zero_grad()
                state.global_step += 1
                preds, targets = _batch_predictions(bundle)
                loss_sum += loss.item() * len(preds)
                correct += int((preds == targets).sum())
                seen += len(preds)
            train_loss = loss_sum / seen
            train_acc = correct / seen
            emit(_metrics_line(epoch, "train", train_loss, train_acc))

            val_acc = None
            if val_data:
                val = evaluate(model, val_data, batch_size=max(cfg.batch_size, 32))
                val_acc = val.accuracy
                emit(_metrics_line(epoch, "val", val.loss, val.accuracy))
                if val.loss < state.best_val_loss:
                    state.best_val_loss = val.loss
                    if out_dir is not None:
                        save_train_checkpoint(out_dir / "best.ckpt", model, optimizer,
                                              epoch, state.global_step,
                                              state.best_val_loss)
            state.epochs_run = epoch
            if out_dir is not None:
                save_train_checkpoint(out_dir / "last.ckpt", model, optimizer,
                                      epoch, state.global_step, state.best_val_loss)

            thresholds = []
            if cfg.early_stop_train_acc is not None:
                thresholds.append(train_acc >= cfg.early_stop_train_acc)
            if cfg.early_stop_val_acc is not None:
                thresholds.append(val_acc is not None and val_acc >= cfg.early_stop_val_acc)
            if thresholds and all(thresholds):
                state.early_stopped = True
                break
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    state.wall_seconds = time.perf_counter() - t0
    return state
