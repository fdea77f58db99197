"""Pareto-efficient group fairness: metrics, trainers and operating-point analysis."""

from .core import Dataset, GroupPartition, OperatingPoint, partition_by_groups, stratified_split
from .metrics import pareto_error, parity_loss, pef_penalty
from .training import TrainConfig, algorithm1, train_baseline, train_pef

__version__ = "0.1.0"

__all__ = ["Dataset", "GroupPartition", "OperatingPoint", "partition_by_groups",
           "stratified_split", "pareto_error", "parity_loss", "pef_penalty", "TrainConfig",
           "algorithm1", "train_baseline", "train_pef", "__version__"]
