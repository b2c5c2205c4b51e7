"""
Layer Definitions

Each named layer of a LayerGraph is one of these blocks. A layer's output is
taken after its nonlinearity (and after its pooling, when it has one).
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..autodiff import Tensor, conv2d, dense, global_avg_pool, pool2d, relu

Shape = Tuple[int, ...]


class Layer:
    """Base class: a named, differentiable map between per-sample shapes"""

    kind: str = "layer"

    def __init__(self, name: str):
        self.name = name

    def params(self) -> Dict[str, Tensor]:
        return {}

    def output_shape(self, input_shape: Shape) -> Shape:
        return input_shape

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r})"


class Rescale(Layer):
    """Fixed pixel normalisation, [0, 255] -> [0, 1]"""

    kind = "scale"

    def __init__(self, name: str, factor: float = 1.0 / 255.0):
        super().__init__(name)
        self.factor = factor

    def __call__(self, x: Tensor) -> Tensor:
        return x * self.factor


@dataclass
class PoolSpec:
    kind: str = "max"
    window: int = 2


class ConvBlock(Layer):
    """conv -> ReLU -> optional pooling"""

    kind = "conv_block"

    def __init__(self, name: str, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0,
                 pool: Optional[PoolSpec] = None):
        super().__init__(name)
        self.weight = weight
        self.bias = bias
        self.stride = stride
        self.pad = pad
        self.pool = pool

    def params(self) -> Dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def output_shape(self, input_shape: Shape) -> Shape:
        _, h, w = input_shape
        k = self.weight.shape[2]
        h = (h + 2 * self.pad - k) // self.stride + 1
        w = (w + 2 * self.pad - k) // self.stride + 1
        if self.pool is not None:
            h = (h - self.pool.window) // self.pool.window + 1
            w = (w - self.pool.window) // self.pool.window + 1
        return (self.weight.shape[0], h, w)

    def __call__(self, x: Tensor) -> Tensor:
        out = relu(conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad))
        if self.pool is not None:
            out = pool2d(out, self.pool.kind, self.pool.window)
        return out


class GlobalPool(Layer):
    """Global average pool, N×C×H×W -> N×C"""

    kind = "global_pool"

    def output_shape(self, input_shape: Shape) -> Shape:
        return (input_shape[0],)

    def __call__(self, x: Tensor) -> Tensor:
        return global_avg_pool(x)


class Dense(Layer):
    """Final classifier producing logits"""

    kind = "dense"

    def __init__(self, name: str, weight: Tensor, bias: Tensor):
        super().__init__(name)
        self.weight = weight
        self.bias = bias

    def params(self) -> Dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def output_shape(self, input_shape: Shape) -> Shape:
        return (self.weight.shape[1],)

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.weight, self.bias)


def he_normal(rng: np.random.Generator, shape: Shape, fan_in: int) -> Tensor:
    """He-style fan-in scaled normal initialisation"""
    std = np.sqrt(2.0 / fan_in)
    return Tensor((rng.standard_normal(shape) * std).astype(np.float32))


def zeros(shape: Shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32))
