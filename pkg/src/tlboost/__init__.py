"""Gradient boosted trees with tree-revision transfer between domains."""

from .dataset import (Dataset, DatasetError, DriftSpec, GeneratorSpec, load_csv,
                      negative_sample, synth_domain_pair, train_test_split, write_csv)
from .engine import TrainConfig, build_tree, find_best_split, train
from .estimator import GradientBoostedTreeClassifier, TransferBoostClassifier
from .metrics import auc, drift_report, information_value, top_recall
from .model_store import (ModelFormatError, dump_text, load, loads, dumps,
                          models_equal, parse_text, save)
from .objective import grad_hess, leaf_weight, logloss, split_gain
from .revise import (ReviseConfig, ReviseError, ReviseTrace, TransferResult,
                     fractile_resplit, multi_round, one_round, revise_one_tree,
                     target_only)
from .tree import Ensemble, ModelError, Tree, TreeNode

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DatasetError", "DriftSpec", "GeneratorSpec", "load_csv",
    "negative_sample", "synth_domain_pair", "train_test_split", "write_csv",
    "TrainConfig", "build_tree", "find_best_split", "train",
    "GradientBoostedTreeClassifier", "TransferBoostClassifier",
    "auc", "drift_report", "information_value", "top_recall",
    "ModelFormatError", "dump_text", "load", "loads", "dumps", "models_equal",
    "parse_text", "save", "grad_hess", "leaf_weight", "logloss", "split_gain",
    "ReviseConfig", "ReviseError", "ReviseTrace", "TransferResult",
    "fractile_resplit", "multi_round", "one_round", "revise_one_tree", "target_only",
    "Ensemble", "ModelError", "Tree", "TreeNode",
]
