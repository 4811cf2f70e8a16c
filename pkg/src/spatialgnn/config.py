"""Configuration dataclasses and the ``key = value`` config-file format.

A config file is plain text: one ``dotted.key = value`` per line, ``#`` starts
a comment, values are parsed as JSON where possible (numbers, lists, true/
false/null) and kept as strings otherwise. Example::

    # small fusion model
    model.encoder.channels = [8, 16]
    model.gnn.layers = 2
    train.epochs = 50
    train.lr = 5.12e-5

The same dotted keys are mirrored 1:1 by CLI flags (dots and underscores
become dashes), and flags win over the file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Optional

import numpy as np

from .errors import DataError

__all__ = ["EncoderConfig", "GnnConfig", "LossConfig", "ModelConfig",
           "TrainConfig", "parse_config_file", "apply_overrides"]


@dataclass
class EncoderConfig:
    channels: tuple = (16,)
    use_preencoder: bool = False
    pre_channels: int = 8
    dropout_rate: float = 0.3
    pool_min_spatial: int = 4
    bn_momentum: float = 0.1


@dataclass
class GnnConfig:
    layers: int = 2
    channels: Optional[int] = None      # None: match the encoder's output width
    aggregator_depth: int = 1
    dropout_rate: float = 0.3
    zero_init_last: bool = True
    message_bias: bool = True


@dataclass
class LossConfig:
    kind: str = "composite"             # composite | iou_composite
    gamma: float = 1.0                  # ranking-loss weight (assumed default)
    alpha: float = 1.0                  # CE weight in iou_composite
    beta: float = 1.0                   # IoU-MSE weight in iou_composite


@dataclass
class ModelConfig:
    in_channels: int = 3
    edge_feature_dim: int = 1
    classes: int = 3
    graph_pool: str = "mean"            # mean | sum | none
    use_iou_head: bool = False
    precision: str = "single"           # single | double
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    gnn: GnnConfig = field(default_factory=GnnConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    def validate(self) -> None:
        if self.precision not in ("single", "double"):
            raise DataError(f"precision must be single|double, got {self.precision!r}")
        if self.graph_pool not in ("mean", "sum", "none"):
            raise DataError(f"graph_pool must be mean|sum|none, got {self.graph_pool!r}")
        if self.loss.kind not in ("composite", "iou_composite"):
            raise DataError(f"loss kind must be composite|iou_composite, got {self.loss.kind!r}")
        if self.loss.kind == "iou_composite" and not self.use_iou_head:
            raise DataError("loss kind iou_composite requires use_iou_head = true")
        if self.classes < 2:
            raise DataError("need at least two classes")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"]["channels"] = list(self.encoder.channels)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        enc = EncoderConfig(**{**d.pop("encoder", {})})
        enc.channels = tuple(enc.channels)
        gnn = GnnConfig(**{**d.pop("gnn", {})})
        loss = LossConfig(**{**d.pop("loss", {})})
        return ModelConfig(encoder=enc, gnn=gnn, loss=loss, **d)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 5.12e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_train_acc: Optional[float] = None
    early_stop_val_acc: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


def parse_config_file(path) -> dict:
    """Read ``dotted.key = value`` lines into a flat dict."""
    out: dict[str, object] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DataError(f"{path}:{lineno}: expected 'key = value'")
                key, _, raw = line.partition("=")
                key, raw = key.strip(), raw.strip()
                if not key:
                    raise DataError(f"{path}:{lineno}: empty key")
                try:
                    out[key] = json.loads(raw)
                except json.JSONDecodeError:
                    out[key] = raw
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    return out


def apply_overrides(model_cfg: ModelConfig, train_cfg: TrainConfig,
                    overrides: dict) -> None:
    """Apply ``model.*`` / ``train.*`` dotted keys onto the config objects."""
    for key, value in overrides.items():
        parts = key.split(".")
        if parts[0] == "model":
            target = model_cfg
            path = parts[1:]
        elif parts[0] == "train":
            target = train_cfg
            path = parts[1:]
        else:
            raise DataError(f"unknown config section {parts[0]!r} in {key!r}")
        for p in path[:-1]:
            if not hasattr(target, p) or not is_dataclass(getattr(target, p)):
                raise DataError(f"unknown config group {p!r} in {key!r}")
            target = getattr(target, p)
        leaf = path[-1] if path else None
        if leaf is None or not hasattr(target, leaf):
            raise DataError(f"unknown config key {key!r}")
        current = getattr(target, leaf)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        field_names = {f.name for f in fields(target)}
        if leaf not in field_names:
            raise DataError(f"unknown config key {key!r}")
        setattr(target, leaf, value)
