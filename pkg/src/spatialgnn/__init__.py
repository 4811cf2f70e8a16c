"""spatialgnn: a graph network whose nodes are CNN feature maps.

Nodes carry full [channels, height, width] feature maps end to end; messages
are 1x1 convolutions over concatenated endpoint maps, aggregation is an
edge-wise sum refined by a small CNN, and updates are residual. Includes a
numpy tape autodiff engine, a deterministic trainer, a synthetic
detector-fusion benchmark and reporting tools.
"""

from .boxes import Box, box_iou, clip_box, crop_resize, union_box
from .checkpoint import load_checkpoint, save_checkpoint
from .checks import run_gradcheck_suite, suite_case_names
from .config import (EncoderConfig, GnnConfig, LossConfig, ModelConfig,
                     TrainConfig, apply_overrides, parse_config_file)
from .detfusion import (CLASS_NAMES, CLASS_RETINA, CLASS_UNION, CLASS_YOLO,
                        DetectionGraphSample, avg_iou_table, batch_samples,
                        build_detection_graph, confusion_matrix, greedy_match,
                        load_fusion_dataset, masked_argmax, normalize_confusion)
from .errors import (AutodiffError, DataError, GraphError, NumericError,
                     ShapeError, SpatialGnnError, StageError)
from .gradcheck import GradCheckReport, GradCheckRow, grad_check
from .graph import (Graph, GraphBatch, GraphDataset, batch_merge, batch_split,
                    graph_validate, load_graphs, neighborhoods, save_graphs)
from .heads import (auc_ranking_loss, composite_loss, cross_entropy,
                    iou_composite_loss, mean_squared_error)
from .model import PredictionBundle, SpatialGnnModel, compute_loss
from .optim import Adam
from .patches import (attach_positional_edge_features, build_grid_graph,
                      extract_patches, image_to_graph)
from .synth import SynthConfig, SynthSample, generate_samples, split_spans, \
    synth_to_graph_samples, write_dataset
from .tensor import Tape, Tensor, active_tape
from .train import EvalResult, TrainState, evaluate, restore_train_checkpoint, \
    save_train_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # tensor core
    "Tensor", "Tape", "active_tape", "grad_check", "GradCheckReport",
    "GradCheckRow", "run_gradcheck_suite", "suite_case_names",
    # graphs
    "Graph", "GraphBatch", "GraphDataset", "batch_merge", "batch_split",
    "graph_validate", "neighborhoods", "save_graphs", "load_graphs",
    "extract_patches", "build_grid_graph", "attach_positional_edge_features",
    "image_to_graph",
    # model
    "SpatialGnnModel", "PredictionBundle", "compute_loss", "ModelConfig",
    "EncoderConfig", "GnnConfig", "LossConfig", "TrainConfig",
    "parse_config_file", "apply_overrides",
    # losses
    "cross_entropy", "auc_ranking_loss", "composite_loss",
    "mean_squared_error", "iou_composite_loss",
    # training
    "Adam", "train", "evaluate", "TrainState", "EvalResult",
    "save_train_checkpoint", "restore_train_checkpoint",
    "save_checkpoint", "load_checkpoint",
    # boxes and fusion
    "Box", "box_iou", "union_box", "clip_box", "crop_resize",
    "CLASS_YOLO", "CLASS_RETINA", "CLASS_UNION", "CLASS_NAMES",
    "DetectionGraphSample", "build_detection_graph", "greedy_match",
    "load_fusion_dataset", "batch_samples", "confusion_matrix",
    "normalize_confusion", "masked_argmax", "avg_iou_table",
    # synthetic data
    "SynthConfig", "SynthSample", "generate_samples", "split_spans",
    "write_dataset", "synth_to_graph_samples",
    # errors
    "SpatialGnnError", "ShapeError", "AutodiffError", "GraphError",
    "DataError", "NumericError", "StageError",
]
