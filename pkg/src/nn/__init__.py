"""Small CNNs: architectures, training and checkpoints"""

from .layers import Layer, ConvBlock, Dense, GlobalPool, Rescale
from .models import ARCHITECTURES, BLOCK_NAMES, FC_LAYER, POOL_LAYER, LayerGraph, build_model
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint, read_checkpoint
from .training import SGDMomentum, TrainingResult, train, evaluate_accuracy

__all__ = [
    "Layer",
    "ConvBlock",
    "Dense",
    "GlobalPool",
    "Rescale",
    "ARCHITECTURES",
    "BLOCK_NAMES",
    "FC_LAYER",
    "POOL_LAYER",
    "LayerGraph",
    "build_model",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "read_checkpoint",
    "SGDMomentum",
    "TrainingResult",
    "train",
    "evaluate_accuracy",
]
