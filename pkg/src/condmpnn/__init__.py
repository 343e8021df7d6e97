"""Conditional linear layers (no, weak, strong, pure) inside EGNN-style
message passing, built on a small reverse-mode autodiff engine over numpy."""

from .conditioning import (AttributeEmbedding, ConditionalLinear, ConditioningMode, CostModel, cost,
                           decompose_weak, pure_kernel, separable_kernel)
from .message_passing import EgnnModel, Graph, GraphBatch, ModelConfig, model_forward
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AttributeEmbedding",
    "ConditionalLinear",
    "ConditioningMode",
    "CostModel",
    "EgnnModel",
    "Graph",
    "GraphBatch",
    "ModelConfig",
    "TrainConfig",
    "cost",
    "decompose_weak",
    "evaluate",
    "model_forward",
    "pure_kernel",
    "separable_kernel",
    "train",
]
