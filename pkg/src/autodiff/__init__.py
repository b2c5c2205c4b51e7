"""Reverse-mode autodiff over dense numpy tensors"""

from .tensor import Tensor, Graph, Node, backward
from .ops import conv2d, dense, relu, pool2d, global_avg_pool, resample_nearest, cross_entropy
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "Tensor",
    "Graph",
    "Node",
    "backward",
    "conv2d",
    "dense",
    "relu",
    "pool2d",
    "global_avg_pool",
    "resample_nearest",
    "cross_entropy",
    "GradCheckReport",
    "grad_check",
]
