"""Desk-scale deep metric learning with dynamic easy-to-hard pair re-weighting."""

from dynmetric.core import (
    BatchLabels,
    EpochSchedule,
    LossParams,
    MiningThresholds,
    build_labels,
)
from dynmetric.similarity import backprop_similarity, cosine_matrix, normalize
from dynmetric.mining import PairMask, mask_stats, select_pairs
from dynmetric.losses import (
    DynamicWeights,
    LossOutput,
    bd_loss,
    bd_star,
    contrastive_loss,
    dynamic_weight_neg,
    dynamic_weight_pos,
    lifted_loss,
    lifted_star,
    ms_loss,
    ms_star,
    triplet_loss,
    triplet_star,
)
from dynmetric.retrieval import RecallResult, recall_at_k

__version__ = "0.1.0"

__all__ = [
    "BatchLabels",
    "DynamicWeights",
    "EpochSchedule",
    "LossOutput",
    "LossParams",
    "MiningThresholds",
    "PairMask",
    "RecallResult",
    "backprop_similarity",
    "bd_loss",
    "bd_star",
    "build_labels",
    "contrastive_loss",
    "cosine_matrix",
    "dynamic_weight_neg",
    "dynamic_weight_pos",
    "lifted_loss",
    "lifted_star",
    "mask_stats",
    "ms_loss",
    "ms_star",
    "normalize",
    "recall_at_k",
    "select_pairs",
    "triplet_loss",
    "triplet_star",
]
