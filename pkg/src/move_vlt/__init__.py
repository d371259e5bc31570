"""Learnable feature aggregation and minority-oriented vicinity expansion for long-tailed video features."""

from .dataset import VideoDataset, compute_tail_criterion, generate_split, group_split
from .model import MoveModel
from .trainer import TrainConfig, predict, train

__version__ = "0.1.0"

__all__ = [
    "MoveModel",
    "TrainConfig",
    "VideoDataset",
    "compute_tail_criterion",
    "generate_split",
    "group_split",
    "predict",
    "train",
]
