"""Detection-fusion harness: detector outputs -> per-object graphs.

Every ground-truth object becomes a tiny graph over crops of the image:

* node 0 class YOLO  - the matched YOLO box crop (when YOLO fired),
* node 1 class Retina - the matched Retina box crop (when Retina fired),
* last node class Union - the hull of the fired boxes (a duplicate of the
  single box when only one detector fired).

Directed edges run detector -> union with a scalar edge feature identifying
the source (0.0 for YOLO, 1.0 for Retina). The training target is the class
whose box has the highest IoU against ground truth; exact ties resolve to the
lowest class index (YOLO < Retina < Union), so a duplicated union box can
never out-rank the detector it copies.

Detections are matched to ground-truth objects greedily by descending IoU
per image and per detector; detections and objects left unmatched drop out,
and objects where no detector fired produce no graph.

File formats (line-delimited JSON):

    detections:   {"image_id", "object_id", "model": "yolo"|"retina",
                   "x1", "y1", "x2", "y2", "score"}
    ground truth: {"image_id", "object_id", "x1", "y1", "x2", "y2"}

Images live at ``<data_dir>/images/<image_id>.png``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .boxes import Box, box_iou, crop_resize, union_box
from .errors import DataError
from .graph import Graph, GraphBatch, batch_merge

__all__ = [
    "CLASS_NAMES", "CLASS_YOLO", "CLASS_RETINA", "CLASS_UNION",
    "DetectionRecord", "GroundTruthRecord", "DetectionGraphSample",
    "build_detection_graph", "greedy_match", "read_detections",
    "read_ground_truth", "load_image_chw", "load_fusion_dataset",
    "batch_samples", "confusion_matrix", "normalize_confusion",
    "masked_argmax", "avg_iou_table",
]

CLASS_YOLO, CLASS_RETINA, CLASS_UNION = 0, 1, 2
CLASS_NAMES = ("YOLO", "Retina", "Union")
MODEL_TAGS = ("yolo", "retina")


@dataclass
class DetectionRecord:
    image_id: str
    object_id: str
    model: str                 # "yolo" | "retina"
    box: Box
    score: float


@dataclass
class GroundTruthRecord:
    image_id: str
    object_id: str
    box: Box


@dataclass
class DetectionGraphSample:
    graph: Graph
    node_classes: np.ndarray       # [N] ints from {0, 1, 2}
    node_boxes: list               # [N] Box, aligned with node order
    node_ious: np.ndarray          # [N] IoU of each node's box vs ground truth
    target: int
    image_id: str
    object_id: str
    gt_box: Box


def build_detection_graph(image_chw: np.ndarray, gt_box: Box,
                          yolo_box: Optional[Box], retina_box: Optional[Box],
                          node_size: int = 128, image_id: str = "",
                          object_id: str = "") -> DetectionGraphSample:
    """Assemble one per-object fusion graph from the fired detectors."""
    if yolo_box is None and retina_box is None:
        raise DataError(f"object {image_id}/{object_id}: no detector fired")

    boxes: list[Box] = []
    classes: list[int] = []
    edges: list[tuple[int, int]] = []
    edge_feats: list[float] = []
    if yolo_box is not None:
        classes.append(CLASS_YOLO)
        boxes.append(yolo_box)
    if retina_box is not None:
        classes.append(CLASS_RETINA)
        boxes.append(retina_box)
    if yolo_box is not None and retina_box is not None:
        union = union_box(yolo_box, retina_box)
    else:
        union = yolo_box if yolo_box is not None else retina_box
    union_idx = len(boxes)
    classes.append(CLASS_UNION)
    boxes.append(union)
    for idx, cls in enumerate(classes[:-1]):
        edges.append((idx, union_idx))
        edge_feats.append(0.0 if cls == CLASS_YOLO else 1.0)

    feats = np.stack([crop_resize(image_chw, b, node_size) for b in boxes]).astype(np.float32)
    ious = np.asarray([box_iou(b, gt_box) for b in boxes], dtype=np.float64)
    # argmax walks nodes in class order, so exact ties land on the lower class
    target = int(classes[int(np.argmax(ious))])

    node_classes = np.asarray(classes, dtype=np.int64)
    graph = Graph(
        node_features=feats,
        edge_index=np.asarray(edges, dtype=np.int64).reshape(-1, 2).T
        if edges else np.zeros((2, 0), dtype=np.int64),
        edge_features=np.asarray(edge_feats, dtype=np.float32).reshape(-1, 1),
        node_labels=node_classes.copy(),
        graph_label=target,
    )
    return DetectionGraphSample(graph=graph, node_classes=node_classes,
                                node_boxes=boxes, node_ious=ious, target=target,
                                image_id=image_id, object_id=object_id,
                                gt_box=gt_box)


def greedy_match(det_boxes: Sequence[Box], gt_boxes: Sequence[Box]) -> dict[int, int]:
    """Greedy 1:1 assignment by descending IoU; zero-overlap pairs never match.

    Ties break on lower detection index, then lower ground-truth index, which
    keeps the matching deterministic.
    """
    pairs = []
    for di, d in enumerate(det_boxes):
        for gi, g in enumerate(gt_boxes):
            iou = box_iou(d, g)
            if iou > 0.0:
                pairs.append((-iou, di, gi))
    pairs.sort()
    used_d: set[int] = set()
    used_g: set[int] = set()
    out: dict[int, int] = {}
    for neg_iou, di, gi in pairs:
        if di in used_d or gi in used_g:
            continue
        out[di] = gi
        used_d.add(di)
        used_g.add(gi)
    return out


# ---------------------------------------------------------------------------
# file ingestion


def _parse_box(rec: dict, where: str) -> Box:
    try:
        return Box(float(rec["x1"]), float(rec["y1"]), float(rec["x2"]), float(rec["y2"]))
    except KeyError as exc:
        raise DataError(f"{where}: missing coordinate {exc}") from exc


def _read_jsonl(path) -> list[dict]:
    records = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return records


def read_detections(path) -> list[DetectionRecord]:
    out = []
    for i, rec in enumerate(_read_jsonl(path), 1):
        where = f"{path}:{i}"
        model = rec.get("model")
        if model not in MODEL_TAGS:
            raise DataError(f"{where}: model must be one of {MODEL_TAGS}, got {model!r}")
        out.append(DetectionRecord(
            image_id=str(rec.get("image_id", "")),
            object_id=str(rec.get("object_id", "")),
            model=model,
            box=_parse_box(rec, where),
            score=float(rec.get("score", 0.0)),
        ))
    return out


def read_ground_truth(path) -> list[GroundTruthRecord]:
    out = []
    for i, rec in enumerate(_read_jsonl(path), 1):
        out.append(GroundTruthRecord(
            image_id=str(rec.get("image_id", "")),
            object_id=str(rec.get("object_id", "")),
            box=_parse_box(rec, f"{path}:{i}"),
        ))
    return out


def load_image_chw(path) -> np.ndarray:
    """PNG -> float32 [3, H, W] scaled to [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_fusion_dataset(data_dir, split: str, node_size: int = 128) -> list[DetectionGraphSample]:
    """Read one split and build per-object graphs, ordered by (image, object)."""
    data_dir = Path(data_dir)
    det_path = data_dir / f"detections_{split}.jsonl"
    gt_path = data_dir / f"ground_truth_{split}.jsonl"
    detections = read_detections(det_path)
    ground_truth = read_ground_truth(gt_path)
    if not ground_truth:
        raise DataError(f"{gt_path}: no ground-truth records")

    gt_by_image: dict[str, list[GroundTruthRecord]] = {}
    for gt in ground_truth:
        gt_by_image.setdefault(gt.image_id, []).append(gt)
    det_by_image: dict[str, dict[str, list[DetectionRecord]]] = {}
    for det in detections:
        det_by_image.setdefault(det.image_id, {}).setdefault(det.model, []).append(det)

    samples = []
    for image_id in sorted(gt_by_image):
        gts = sorted(gt_by_image[image_id], key=lambda r: r.object_id)
        per_object: dict[int, dict[str, Box]] = {i: {} for i in range(len(gts))}
        for model in MODEL_TAGS:
            dets = det_by_image.get(image_id, {}).get(model, [])
            match = greedy_match([d.box for d in dets], [g.box for g in gts])
            for di, gi in match.items():
                per_object[gi][model] = dets[di].box
        if not any(per_object[i] for i in per_object):
            continue
        image = load_image_chw(data_dir / "images" / f"{image_id}.png")
        for gi, gt in enumerate(gts):
            fired = per_object[gi]
            if not fired:
                continue
            samples.append(build_detection_graph(
                image, gt.box, fired.get("yolo"), fired.get("retina"),
                node_size=node_size, image_id=image_id, object_id=gt.object_id))
    if not samples:
        raise DataError(f"split '{split}' produced no usable object graphs")
    return samples


def batch_samples(samples: Sequence[DetectionGraphSample]) -> tuple[GraphBatch, np.ndarray]:
    """Merge sample graphs and concatenate the per-node IoU targets."""
    batch = batch_merge([s.graph for s in samples])
    ious = np.concatenate([s.node_ious for s in samples])
    return batch, ious


# ---------------------------------------------------------------------------
# metrics


def confusion_matrix(preds: np.ndarray, targets: np.ndarray, num_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    preds = np.asarray(preds, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if preds.shape != targets.shape:
        raise DataError(f"preds shape {preds.shape} != targets shape {targets.shape}")
    if preds.size and (min(preds.min(), targets.min()) < 0
                       or max(preds.max(), targets.max()) >= num_classes):
        raise DataError(f"class id out of range for {num_classes} classes")
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (targets, preds), 1)
    return out


def normalize_confusion(counts: np.ndarray) -> np.ndarray:
    """Row-normalize; rows with no samples stay all-zero."""
    counts = np.asarray(counts, dtype=np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


def masked_argmax(logits_row: np.ndarray, present: Sequence[int]) -> int:
    """Argmax restricted to classes that actually have a node in the sample."""
    present = list(present)
    sub = np.asarray([logits_row[c] for c in present])
    return int(present[int(np.argmax(sub))])


def avg_iou_table(samples: Sequence[DetectionGraphSample],
                  selected_classes: Sequence[int]) -> list[tuple[int, str, float]]:
    """Three-row mean-IoU comparison: each raw detector vs the fused selection.

    Detector rows average over the samples where that detector fired; the
    fused row looks up the selected class's box per sample (the union node
    when the selection names an absent class, which only degenerate 2-node
    samples can hit).
    """
    if len(samples) != len(selected_classes):
        raise DataError("one selected class per sample required")
    per_model: dict[int, list[float]] = {CLASS_YOLO: [], CLASS_RETINA: []}
    fused: list[float] = []
    for s, sel in zip(samples, selected_classes):
        lookup = {int(c): float(i) for c, i in zip(s.node_classes, s.node_ious)}
        for cls in (CLASS_YOLO, CLASS_RETINA):
            if cls in lookup:
                per_model[cls].append(lookup[cls])
        fused.append(lookup.get(int(sel), lookup[CLASS_UNION]))
    rows = [
        (1, "yolo", float(np.mean(per_model[CLASS_YOLO])) if per_model[CLASS_YOLO] else 0.0),
        (2, "retina", float(np.mean(per_model[CLASS_RETINA])) if per_model[CLASS_RETINA] else 0.0),
        (3, "fused", float(np.mean(fused)) if fused else 0.0),
    ]
    return rows
