"""Report rendering: delimited text tables plus matplotlib figures.

Everything here consumes plain Python/numpy data produced elsewhere (metrics
records, confusion matrices, IoU tables) and writes files; nothing imports
the model. Figures use the Agg backend so report generation works headless.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .errors import DataError  # noqa: E402

__all__ = [
    "read_metrics", "split_series", "format_confusion_table",
    "format_iou_table", "write_table", "loss_curves_figure",
    "confusion_figure", "iou_bar_figure", "render_report",
]

DELIM = "\t"


def read_metrics(path) -> list[dict]:
    """Parse a metrics.jsonl file into a list of per-epoch records."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: bad metrics record: {exc}") from exc
            records.append(rec)
    if not records:
        raise DataError(f"{path}: no metrics records")
    return records


def split_series(records: Sequence[dict], split: str, key: str) -> tuple[list[int], list[float]]:
    """Epoch-ordered (epochs, values) for one split, e.g. ('val', 'loss')."""
    pairs = [(r["epoch"], r[key]) for r in records if r.get("split") == split]
    pairs.sort(key=lambda p: p[0])
    return [p[0] for p in pairs], [p[1] for p in pairs]


def format_confusion_table(normalized: np.ndarray, class_names: Sequence[str]) -> str:
    """Tab-delimited row-normalized confusion matrix, four decimals per cell."""
    if normalized.ndim != 2 or normalized.shape[0] != normalized.shape[1]:
        raise DataError("confusion matrix must be square")
    if len(class_names) != normalized.shape[0]:
        raise DataError("class name count does not match matrix size")
    lines = [DELIM.join(["true\\pred", *class_names])]
    for i, name in enumerate(class_names):
        cells = [f"{normalized[i, j]:.4f}" for j in range(normalized.shape[1])]
        lines.append(DELIM.join([name, *cells]))
    return "\n".join(lines) + "\n"


def format_iou_table(rows: Sequence[tuple[int, str, float]]) -> str:
    """Tab-delimited ranking table: rank, method, mean IoU (four decimals)."""
    lines = [DELIM.join(["rank", "method", "mean_iou"])]
    for rank, method, mean_iou in rows:
        lines.append(DELIM.join([str(rank), method, f"{mean_iou:.4f}"]))
    return "\n".join(lines) + "\n"


def write_table(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def loss_curves_figure(records: Sequence[dict], out_path) -> None:
    """Loss and accuracy curves per split; best validation epoch is marked."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for split, style in (("train", "-"), ("val", "--")):
        epochs, losses = split_series(records, split, "loss")
        if epochs:
            ax_loss.plot(epochs, losses, style, label=split)
        epochs, accs = split_series(records, split, "accuracy")
        if epochs:
            ax_acc.plot(epochs, accs, style, label=split)
    val_epochs, val_losses = split_series(records, "val", "loss")
    if val_epochs:
        best = int(np.argmin(val_losses))
        ax_loss.plot(val_epochs[best], val_losses[best], "o", color="red",
                     label=f"best val (epoch {val_epochs[best]})")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def confusion_figure(normalized: np.ndarray, class_names: Sequence[str], out_path) -> None:
    """Row-normalized confusion heatmap with per-cell annotations."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(normalized, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(class_names)), class_names)
    ax.set_yticks(range(len(class_names)), class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(normalized.shape[0]):
        for j in range(normalized.shape[1]):
            color = "white" if normalized[i, j] > 0.5 else "black"
            ax.text(j, i, f"{normalized[i, j]:.2f}", ha="center", va="center",
                    color=color)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def iou_bar_figure(rows: Sequence[tuple[int, str, float]], out_path) -> None:
    """Bar chart of mean IoU by box-selection strategy."""
    methods = [r[1] for r in rows]
    values = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    bars = ax.bar(methods, values, color=["#888888", "#888888", "#2c7fb8"][:len(rows)])
    for bar, v in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, v, f"{v:.4f}",
                ha="center", va="bottom")
    ax.set_ylabel("mean IoU")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_report(out_dir, metrics_path=None,
                  confusion: Optional[np.ndarray] = None,
                  class_names: Optional[Sequence[str]] = None,
                  iou_rows: Optional[Sequence[tuple[int, str, float]]] = None) -> list[str]:
    """Write every table and figure the inputs allow; returns written names."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if metrics_path is not None:
        records = read_metrics(metrics_path)
        loss_curves_figure(records, out_dir / "curves.png")
        written.append("curves.png")
    if confusion is not None:
        if class_names is None:
            raise DataError("confusion matrix requires class names")
        norm = confusion.astype(np.float64)
        sums = norm.sum(axis=1, keepdims=True)
        norm = np.divide(norm, sums, out=np.zeros_like(norm), where=sums > 0)
        write_table(out_dir / "confusion.tsv", format_confusion_table(norm, class_names))
        confusion_figure(norm, class_names, out_dir / "confusion.png")
        written += ["confusion.tsv", "confusion.png"]
    if iou_rows is not None:
        write_table(out_dir / "iou_table.tsv", format_iou_table(iou_rows))
        iou_bar_figure(iou_rows, out_dir / "iou_table.png")
        written += ["iou_table.tsv", "iou_table.png"]
    if not written:
        raise DataError("report called with nothing to render")
    return written
