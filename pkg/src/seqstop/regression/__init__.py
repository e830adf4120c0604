"""Posterior regression layer: dynamic trees and the partition baseline."""

from .base import ALC_SENTINEL, PosteriorBatch, PosteriorSummary, alc, fit, predict, update
from .partition import PartitionRegression, PartitionSpec, bw_partition
from .trees import FrozenTrees, TreeEnsemble, TreeSpec

__all__ = [
    "ALC_SENTINEL",
    "PosteriorBatch",
    "PosteriorSummary",
    "alc",
    "fit",
    "predict",
    "update",
    "PartitionRegression",
    "PartitionSpec",
    "bw_partition",
    "FrozenTrees",
    "TreeEnsemble",
    "TreeSpec",
]
