"""Factorization-machine scoring and training with graph-convolved feature embeddings."""

from .data import (DatasetSplit, FeatureSpace, PackedInstances, SparseInstance,
                   format_field_map, format_libfm_line, load_field_map,
                   load_libfm, negative_sample, parse_libfm_line, save_libfm,
                   split_dataset)
from .errors import (CheckpointError, ConfigError, DataFormatError, GemfmError,
                     GraphFormatError, TrainingDivergedError)
from .graph import (FeatureGraph, NormalizedAdjacency, build_graph, normalize,
                    sample_neighbors)
from .metrics import MetricReport, count_params, format_report, mae, metric_report, rmse
from .model import (EmbeddingView, ModelParams, fm_interaction, fm_score,
                    gcn_embed, gem_score, lookup_embed, predict_batch)
from .seeding import derive_rng, derive_seed
from .train import (EpochRecord, GradientSet, OptimizerState, RunReport,
                    TrainConfig, apply_dropout, backward, loss, optimizer_step,
                    train)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "DataFormatError", "DatasetSplit",
    "EmbeddingView", "EpochRecord", "FeatureGraph", "FeatureSpace",
    "GemfmError", "GradientSet", "GraphFormatError", "MetricReport",
    "ModelParams", "NormalizedAdjacency", "OptimizerState", "PackedInstances",
    "RunReport", "SparseInstance", "TrainConfig", "TrainingDivergedError",
    "apply_dropout", "backward", "build_graph", "count_params", "derive_rng",
    "derive_seed", "fm_interaction", "fm_score", "format_field_map",
    "format_libfm_line", "format_report", "gcn_embed", "gem_score",
    "load_field_map", "load_libfm", "lookup_embed", "loss", "mae",
    "metric_report", "negative_sample", "normalize", "optimizer_step",
    "parse_libfm_line", "predict_batch", "rmse", "sample_neighbors",
    "save_libfm", "split_dataset", "train",
]
