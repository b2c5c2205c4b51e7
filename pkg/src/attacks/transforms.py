"""
Attack Transforms

Input diversity (DI), translation invariance (TI), scale invariance (SI)
and variance tuning (VT). DI and SI act on the input inside the graph so
gradients flow through them; TI and VT act on gradients.
"""

import math
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import norm

from ..autodiff import Tensor, resample_nearest
from ..core.exceptions import ConfigError, ShapeError

GradientFn = Callable[[np.ndarray], np.ndarray]


# =============================================================================
# DI
# =============================================================================

def _resize_table(size: int, side: int, offset: int) -> np.ndarray:
    """Source index per output position; -1 outside the resized patch"""
    table = np.full(size, -1, dtype=np.int64)
    table[offset:offset + side] = (np.arange(side) * size) // side
    return table


def transform_di(x: Tensor, p: float, rngs: Sequence[np.random.Generator], min_scale: float = 0.9) -> Tensor:
    """
    With probability p per image: nearest-neighbour resize to a random side
    in [ceil(min_scale*H), H], then zero-pad back to H×W at a random offset.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"DI probability must lie in [0, 1], got {p}")
    n, _, h, w = x.shape
    if len(rngs) != n:
        raise ShapeError("one random stream per image is required", (len(rngs),), x.shape)

    rows = np.tile(np.arange(h), (n, 1))
    cols = np.tile(np.arange(w), (n, 1))
    applied = False
    for i, rng in enumerate(rngs):
        if rng.random() >= p:
            continue
        side_h = int(rng.integers(math.ceil(min_scale * h), h + 1))
        side_w = min(w, max(1, int(round(side_h * w / h))))
        top = int(rng.integers(0, h - side_h + 1))
        left = int(rng.integers(0, w - side_w + 1))
        rows[i] = _resize_table(h, side_h, top)
        cols[i] = _resize_table(w, side_w, left)
        applied = True
    return resample_nearest(x, rows, cols) if applied else x


# =============================================================================
# TI
# =============================================================================

def gaussian_kernel(kernel_len: int) -> np.ndarray:
    """Normalised kernel_len×kernel_len Gaussian, sigma = kernel_len / 3"""
    if kernel_len < 1 or kernel_len % 2 == 0:
        raise ConfigError(f"TI kernel length must be a positive odd integer, got {kernel_len}")
    radius = (kernel_len - 1) / 2
    profile = norm.pdf(np.linspace(-radius, radius, kernel_len), scale=kernel_len / 3)
    kernel = np.outer(profile, profile)
    return kernel / kernel.sum()


def transform_ti(grad: np.ndarray, kernel_len: int) -> np.ndarray:
    """Depthwise same-size smoothing of an N×C×H×W gradient, zero padding"""
    kernel = gaussian_kernel(kernel_len)
    if kernel_len == 1:
        return grad
    grad = np.asarray(grad)
    smoothed = ndimage.correlate(grad.astype(np.float64), kernel[None, None], mode="constant", cval=0.0)
    return smoothed.astype(grad.dtype)


# =============================================================================
# SI
# =============================================================================

def transform_si(x: Tensor, m: int) -> List[Tensor]:
    """Scale copies x / 2^i for i = 0..m-1"""
    if m < 1:
        raise ConfigError(f"SI needs at least one copy, got m={m}")
    return [x] + [x * (1.0 / 2 ** i) for i in range(1, m)]


# =============================================================================
# VT
# =============================================================================

def variance_tuning(
    grad_fn: GradientFn,
    x: np.ndarray,
    epsilon: float,
    vt_beta: float,
    n: int,
    rngs: Sequence[np.random.Generator],
    base_grad: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    v = mean_j grad_fn(x + r_j) - grad_fn(x), r_j ~ Uniform(-beta*eps, beta*eps)
    drawn per image from that image's stream.
    """
    if n < 1:
        raise ConfigError(f"VT needs at least one neighbour, got N={n}")
    x = np.asarray(x)
    if len(rngs) != len(x):
        raise ShapeError("one random stream per image is required", (len(rngs),), x.shape)
    radius = vt_beta * epsilon
    if base_grad is None:
        base_grad = grad_fn(x)

    total = np.zeros_like(base_grad, dtype=np.float64)
    for _ in range(n):
        offsets = np.stack([rng.uniform(-radius, radius, size=x.shape[1:]) for rng in rngs])
        total += grad_fn((x + offsets).astype(x.dtype))
    return (total / n - base_grad).astype(base_grad.dtype)
