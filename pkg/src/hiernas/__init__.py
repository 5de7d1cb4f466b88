"""Hierarchical cell-based architecture search on a numpy autodiff engine."""

from .clustering import (
    ClusterAssignment,
    CorrelationAccumulator,
    CorrelationMatrix,
    cluster,
    estimate_correlation,
    pearson,
    select_representatives,
)
from .confusion import ConfusionReport, NetConfig, gradient_confusion, match_depth, profile
from .data import Dataset, load_dataset, save_dataset, synth_texture, texture_splits
from .genotype import Genotype, GenotypeError, to_dot
from .io import HT1Error, read_ht1, write_ht1
from .operators import OperatorKind, SearchSpace, space
from .search import SearchConfig, derive_genotype, run_search, stage1, stage2, train_final
from .supernet import ArchitectureParams, SingleEdgeNet, Supernet
from .tensor import Tensor, no_grad, parameter
from .training import NumericError, TrainConfig, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "ArchitectureParams",
    "ClusterAssignment",
    "ConfusionReport",
    "CorrelationAccumulator",
    "CorrelationMatrix",
    "Dataset",
    "Genotype",
    "GenotypeError",
    "HT1Error",
    "NetConfig",
    "NumericError",
    "OperatorKind",
    "SearchConfig",
    "SearchSpace",
    "SingleEdgeNet",
    "Supernet",
    "Tensor",
    "TrainConfig",
    "cluster",
    "derive_genotype",
    "estimate_correlation",
    "evaluate",
    "fit",
    "gradient_confusion",
    "load_dataset",
    "match_depth",
    "no_grad",
    "parameter",
    "pearson",
    "profile",
    "read_ht1",
    "run_search",
    "save_dataset",
    "select_representatives",
    "space",
    "stage1",
    "stage2",
    "synth_texture",
    "texture_splits",
    "to_dot",
    "train_final",
    "write_ht1",
]
