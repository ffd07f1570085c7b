"""Doubly supervised two-channel networks with privileged-modality transfer.

A source channel sees the privileged modality on paired records only; a
target channel sees the target modality everywhere and is the deployed
classifier.
"""

from .datagen import BimodalDataset, FoldPlan, GenConfig, generate_synthetic, load_csv, make_fold_plan, save_csv
from .estimator import DDSTNClassifier
from .evaluation import EvalReport, RocCurve, Trainer, cross_validate, evaluate, metrics, predict, roc_auc
from .exceptions import ConfigError, ContractError, DataError, DDSTNError, DimensionError, MetricError, SpecError
from .losses import Hyperparams
from .networks import LayerSpec, NetworkParams, build_network, forward, parse_spec
from .training import ALGORITHMS, ChannelSpecs, OptimizerConfig, TrainConfig, TrainedModel, train

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "BimodalDataset", "ChannelSpecs", "ConfigError", "ContractError", "DDSTNClassifier",
    "DDSTNError", "DataError", "DimensionError", "EvalReport", "FoldPlan", "GenConfig", "Hyperparams",
    "LayerSpec", "MetricError", "NetworkParams", "OptimizerConfig", "RocCurve", "SpecError", "TrainConfig",
    "TrainedModel", "Trainer", "build_network", "cross_validate", "evaluate", "forward", "generate_synthetic",
    "load_csv", "make_fold_plan", "metrics", "parse_spec", "predict", "roc_auc", "save_csv", "train",
]
