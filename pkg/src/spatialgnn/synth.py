"""Synthetic detection-fusion scenes with controllable winners.

Each scene is one bordered rectangle (the object) on a plain background, one
ground-truth box, and two simulated detector boxes. The two detectors carry
deliberately different error styles so that crop content identifies its
source: YOLO errs along the horizontal axis, Retina along the vertical axis.
That matters because sum-aggregated message passing with mean pooling only
ever sees the *sum* of the two detector nodes; with style-free symmetric
noise, "YOLO was right" and "Retina was right" would be indistinguishable by
construction, no matter the model.

Class recipes (scaled by the per-detector noise knobs, default 1.0):

* YOLO best   - YOLO hugs the truth; Retina slides up/down far enough that
  even the hull beats it, but not the snug YOLO box.
* Retina best - mirrored, with YOLO sliding left/right.
* Union best  - YOLO covers one horizontal portion, Retina one vertical
  portion; each alone is mediocre, their hull is snug.

With ``class_balance`` set, samples are drawn per-class against those recipes
and accepted only when the argmax-IoU label agrees, so the requested mix is
exact. Without it boxes get free jitter proportional to the noise knobs and
the label simply falls where it falls: zero noise reproduces ground truth for
every detector and all labels tie-break to YOLO.

Everything derives from ``(seed, sample index)``, so a regenerated dataset is
byte-identical, PNGs included.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .boxes import Box, box_iou, union_box
from .detfusion import (CLASS_RETINA, CLASS_UNION, CLASS_YOLO,
                        DetectionGraphSample, build_detection_graph)
from .errors import DataError

__all__ = ["SynthConfig", "SynthSample", "generate_samples", "split_spans",
           "write_dataset", "synth_to_graph_samples"]

SYNTH_DOMAIN = 4
SEQUENCE_DOMAIN = 5


@dataclass
class SynthConfig:
    samples: int = 2000
    image_size: int = 96
    seed: int = 0
    class_balance: Optional[tuple] = (0.2, 0.2, 0.6)   # (yolo, retina, union) or None
    yolo_noise: float = 1.0
    retina_noise: float = 1.0
    jitter: float = 0.02
    pixel_noise: float = 4.0
    miss_rate: float = 0.0            # free mode only: chance a detector stays silent
    val_frac: float = 0.1
    test_frac: float = 0.1

    def validate(self) -> None:
        if self.samples < 1:
            raise DataError("need at least one sample")
        if self.image_size < 16:
            raise DataError("image_size must be >= 16")
        if self.class_balance is not None:
            bal = tuple(self.class_balance)
            if len(bal) != 3 or any(b < 0 for b in bal) or abs(sum(bal) - 1.0) > 1e-9:
                raise DataError(f"class_balance must be 3 non-negative fractions summing"
                                f" to 1, got {bal}")
        if not 0.0 <= self.miss_rate < 1.0:
            raise DataError("miss_rate must be in [0, 1)")
        if self.val_frac < 0 or self.test_frac < 0 or self.val_frac + self.test_frac >= 1:
            raise DataError("val_frac + test_frac must leave room for a train split")


@dataclass
class SynthSample:
    image: np.ndarray              # uint8 [H, W, 3]
    image_id: str
    object_id: str
    gt_box: Box
    yolo: Optional[tuple] = None   # (Box, score)
    retina: Optional[tuple] = None
    intended_class: Optional[int] = None
    label: int = 0                 # argmax-IoU class over fired boxes


def _draw_scene(rng: np.random.Generator, size: int, pixel_noise: float):
    s = float(size)
    w = rng.uniform(0.34, 0.52) * s
    h = rng.uniform(0.34, 0.52) * s
    x1 = rng.uniform(0.20 * s, 0.80 * s - w)
    y1 = rng.uniform(0.20 * s, 0.80 * s - h)
    gt = Box(float(round(x1)), float(round(y1)),
             float(round(x1 + w)), float(round(y1 + h)))

    bg = rng.integers(30, 90, size=3)
    fill = rng.integers(150, 235, size=3)
    border = rng.integers(0, 50, size=3)
    img = np.empty((size, size, 3), dtype=np.float64)
    img[...] = bg
    ix1, iy1, ix2, iy2 = (int(gt.x1), int(gt.y1), int(gt.x2), int(gt.y2))
    img[iy1:iy2, ix1:ix2] = fill
    t = 2  # border thickness
    img[iy1:iy1 + t, ix1:ix2] = border
    img[iy2 - t:iy2, ix1:ix2] = border
    img[iy1:iy2, ix1:ix1 + t] = border
    img[iy1:iy2, ix2 - t:ix2] = border
    if pixel_noise > 0:
        img += rng.normal(0.0, pixel_noise, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8), gt


def _jittered(rng, box: Box, amount_x: float, amount_y: float) -> Box:
    return Box(box.x1 + rng.uniform(-amount_x, amount_x),
               box.y1 + rng.uniform(-amount_y, amount_y),
               box.x2 + rng.uniform(-amount_x, amount_x),
               box.y2 + rng.uniform(-amount_y, amount_y))


def _boxes_for_class(rng: np.random.Generator, gt: Box, intended: int,
                     cfg: SynthConfig) -> tuple[Box, Box]:
    w, h = gt.width, gt.height
    jx, jy = cfg.jitter * w, cfg.jitter * h
    margin = 0.03 * min(w, h)
    u_y = max(cfg.yolo_noise, 0.35)
    u_r = max(cfg.retina_noise, 0.35)

    snug = Box(gt.x1 - margin, gt.y1 - margin, gt.x2 + margin, gt.y2 + margin)
    if intended == CLASS_YOLO:
        yolo = _jittered(rng, snug, jx, jy)
        d = h * (0.30 + 0.30 * rng.random()) * u_r
        sign = 1.0 if rng.random() < 0.5 else -1.0
        retina = _jittered(rng, Box(gt.x1, gt.y1 + sign * d, gt.x2, gt.y2 + sign * d), jx, jy)
    elif intended == CLASS_RETINA:
        retina = _jittered(rng, snug, jx, jy)
        d = w * (0.30 + 0.30 * rng.random()) * u_y
        sign = 1.0 if rng.random() < 0.5 else -1.0
        yolo = _jittered(rng, Box(gt.x1 + sign * d, gt.y1, gt.x2 + sign * d, gt.y2), jx, jy)
    else:  # union best: complementary partial coverage
        cut_w = w * min(0.45, (0.28 + 0.14 * rng.random()) * u_y)
        cut_h = h * min(0.45, (0.28 + 0.14 * rng.random()) * u_r)
        if rng.random() < 0.5:   # YOLO covers the left part
            yolo = Box(gt.x1 - margin, gt.y1 - margin, gt.x2 - cut_w, gt.y2 + margin)
        else:
            yolo = Box(gt.x1 + cut_w, gt.y1 - margin, gt.x2 + margin, gt.y2 + margin)
        if rng.random() < 0.5:   # Retina covers the top part
            retina = Box(gt.x1 - margin, gt.y1 - margin, gt.x2 + margin, gt.y2 - cut_h)
        else:
            retina = Box(gt.x1 - margin, gt.y1 + cut_h, gt.x2 + margin, gt.y2 + margin)
        yolo = _jittered(rng, yolo, jx, jy)
        retina = _jittered(rng, retina, jx, jy)
    return yolo, retina


def _free_boxes(rng: np.random.Generator, gt: Box, cfg: SynthConfig) -> tuple[Box, Box]:
    w, h = gt.width, gt.height
    for _ in range(100):
        try:
            # style: YOLO noise is mostly horizontal, Retina mostly vertical
            yolo = Box(gt.x1 + rng.normal(0, 0.12 * w) * cfg.yolo_noise,
                       gt.y1 + rng.normal(0, 0.04 * h) * cfg.yolo_noise,
                       gt.x2 + rng.normal(0, 0.12 * w) * cfg.yolo_noise,
                       gt.y2 + rng.normal(0, 0.04 * h) * cfg.yolo_noise)
            retina = Box(gt.x1 + rng.normal(0, 0.04 * w) * cfg.retina_noise,
                         gt.y1 + rng.normal(0, 0.12 * h) * cfg.retina_noise,
                         gt.x2 + rng.normal(0, 0.04 * w) * cfg.retina_noise,
                         gt.y2 + rng.normal(0, 0.12 * h) * cfg.retina_noise)
            return yolo, retina
        except DataError:
            continue  # a degenerate draw; try again
    raise DataError("could not draw non-degenerate detector boxes")


def _label_for(yolo: Optional[Box], retina: Optional[Box], gt: Box) -> int:
    """Argmax-IoU class with the YOLO < Retina < Union tie-break."""
    entries = []
    if yolo is not None:
        entries.append((CLASS_YOLO, box_iou(yolo, gt)))
    if retina is not None:
        entries.append((CLASS_RETINA, box_iou(retina, gt)))
    if yolo is not None and retina is not None:
        hull = union_box(yolo, retina)
    else:
        hull = yolo if yolo is not None else retina
    entries.append((CLASS_UNION, box_iou(hull, gt)))
    ious = np.asarray([iou for _, iou in entries])
    return entries[int(np.argmax(ious))][0]


def _class_sequence(cfg: SynthConfig) -> list[int]:
    bal = tuple(cfg.class_balance)
    n = cfg.samples
    counts = [int(round(b * n)) for b in bal]
    while sum(counts) > n:
        counts[int(np.argmax(counts))] -= 1
    while sum(counts) < n:
        counts[int(np.argmin(counts))] += 1
    seq = [CLASS_YOLO] * counts[0] + [CLASS_RETINA] * counts[1] + [CLASS_UNION] * counts[2]
    rng = np.random.default_rng([cfg.seed, SEQUENCE_DOMAIN])
    return [seq[i] for i in rng.permutation(n)]


def generate_samples(cfg: SynthConfig) -> list[SynthSample]:
    cfg.validate()
    sequence = _class_sequence(cfg) if cfg.class_balance is not None else None
    samples = []
    for idx in range(cfg.samples):
        rng = np.random.default_rng([cfg.seed, SYNTH_DOMAIN, idx])
        image, gt = _draw_scene(rng, cfg.image_size, cfg.pixel_noise)
        yolo = retina = None
        intended = None
        if sequence is not None:
            intended = sequence[idx]
            for _ in range(60):
                try:
                    yolo, retina = _boxes_for_class(rng, gt, intended, cfg)
                except DataError:
                    continue
                if _label_for(yolo, retina, gt) == intended:
                    break
        else:
            yolo, retina = _free_boxes(rng, gt, cfg)
            if cfg.miss_rate > 0.0:
                drop_y = rng.random() < cfg.miss_rate
                drop_r = rng.random() < cfg.miss_rate
                if drop_y and not drop_r:
                    yolo = None
                elif drop_r and not drop_y:
                    retina = None
        label = _label_for(yolo, retina, gt)
        samples.append(SynthSample(
            image=image,
            image_id=f"img{idx:05d}",
            object_id="obj0",
            gt_box=gt,
            yolo=None if yolo is None else (yolo, float(rng.uniform(0.55, 0.95))),
            retina=None if retina is None else (retina, float(rng.uniform(0.55, 0.95))),
            intended_class=intended,
            label=label,
        ))
    return samples


def split_spans(n: int, val_frac: float, test_frac: float) -> dict[str, range]:
    n_test = int(round(test_frac * n))
    n_val = int(round(val_frac * n))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise DataError("split fractions leave no training samples")
    return {"train": range(0, n_train),
            "val": range(n_train, n_train + n_val),
            "test": range(n_train + n_val, n)}


def write_dataset(samples: list[SynthSample], out_dir, cfg: SynthConfig) -> dict:
    """Write images plus per-split detections/ground-truth files; returns the manifest."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    for s in samples:
        Image.fromarray(s.image).save(out_dir / "images" / f"{s.image_id}.png")

    spans = split_spans(len(samples), cfg.val_frac, cfg.test_frac)
    manifest = {"version": 1, "samples": len(samples),
                "image_size": cfg.image_size, "seed": cfg.seed,
                "class_balance": None if cfg.class_balance is None
                else list(cfg.class_balance),
                "yolo_noise": cfg.yolo_noise, "retina_noise": cfg.retina_noise,
                "splits": {}}
    for split, span in spans.items():
        det_path = out_dir / f"detections_{split}.jsonl"
        gt_path = out_dir / f"ground_truth_{split}.jsonl"
        with open(det_path, "w", encoding="utf-8") as det_fh, \
                open(gt_path, "w", encoding="utf-8") as gt_fh:
            for i in span:
                s = samples[i]
                gt_fh.write(json.dumps({
                    "image_id": s.image_id, "object_id": s.object_id,
                    "x1": s.gt_box.x1, "y1": s.gt_box.y1,
                    "x2": s.gt_box.x2, "y2": s.gt_box.y2}) + "\n")
                for model, fired in (("yolo", s.yolo), ("retina", s.retina)):
                    if fired is None:
                        continue
                    box, score = fired
                    det_fh.write(json.dumps({
                        "image_id": s.image_id, "object_id": s.object_id,
                        "model": model, "x1": box.x1, "y1": box.y1,
                        "x2": box.x2, "y2": box.y2, "score": score}) + "\n")
        manifest["splits"][split] = len(span)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def synth_to_graph_samples(samples: list[SynthSample],
                           node_size: int = 32) -> list[DetectionGraphSample]:
    """In-memory fast path: build fusion graphs without the PNG round trip."""
    out = []
    for s in samples:
        image = np.ascontiguousarray(
            s.image.astype(np.float32).transpose(2, 0, 1)) / 255.0
        out.append(build_detection_graph(
            image, s.gt_box,
            None if s.yolo is None else s.yolo[0],
            None if s.retina is None else s.retina[0],
            node_size=node_size, image_id=s.image_id, object_id=s.object_id))
    return out
