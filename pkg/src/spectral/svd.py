"""
Feature Decomposition

Thin SVD of a reshaped C×H×W feature map, Top-k reconstruction, and the
reverse-mode adjoint of the truncation X -> Z_k(X) = sum_{i<=k} s_i u_i v_i^T.

Decompositions run in float64 through LAPACK regardless of the feature
dtype; results are cast back on the way out.

Adjoint of the truncation, with A = U^T G V and top = {1..k}:

    K_ij = A_ij                                          i, j in top
    K_ij = (A_ij s_i^2 + A_ji s_i s_j) / (s_i^2 - s_j^2)   i in top, j not
    K_ij = (A_ij s_j^2 + A_ji s_i s_j) / (s_j^2 - s_i^2)   j in top, i not
    K_ij = 0                                             otherwise

    dX = U K V^T + (I - U U^T) G V_k V_k^T + U_k U_k^T G (I - V V^T)

Inverse gaps are clamped at 1/gap_eps in magnitude; exact ties give 0.
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..autodiff.tensor import Tensor, record
from ..core.exceptions import NonFiniteError, ShapeError
from ..core.models import GradMode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SVDResult:
    """X = U diag(S) V^T with U: C×M, S: M (descending), V: HW×M"""
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def M(self) -> int:
        return int(self.S.shape[-1])

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


# =============================================================================
# Reshaping
# =============================================================================

def reshape_feature(feature: Union[Tensor, np.ndarray]) -> np.ndarray:
    """C×H×W -> C×HW, row-major over (H, W) within each channel"""
    data = feature.data if isinstance(feature, Tensor) else np.asarray(feature)
    if data.ndim != 3:
        raise ShapeError("feature map must be C×H×W", data.shape)
    c, h, w = data.shape
    return data.reshape(c, h * w)


def restore_feature(matrix: np.ndarray, height: int, width: int) -> np.ndarray:
    """Inverse of reshape_feature"""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[1] != height * width:
        raise ShapeError(f"matrix cannot be restored to C×{height}×{width}", matrix.shape)
    return matrix.reshape(matrix.shape[0], height, width)


# =============================================================================
# Decomposition
# =============================================================================

def _require_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{what} contains NaN or Inf")


def svd(matrix: np.ndarray) -> SVDResult:
    """Thin SVD of a C×HW matrix, M = min(C, HW)"""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ShapeError("svd expects a matrix", matrix.shape)
    _require_finite(matrix, "svd input")
    u, s, vh = np.linalg.svd(matrix.astype(np.float64), full_matrices=False)
    return SVDResult(U=u, S=s, V=vh.T)


def topk_reconstruct(result: SVDResult, k: int) -> np.ndarray:
    if not 1 <= k <= result.M:
        raise ValueError(f"k must lie in [1, {result.M}], got {k}")
    return (result.U[:, :k] * result.S[:k]) @ result.V[:, :k].T


# =============================================================================
# Adjoint
# =============================================================================

def _inverse_gaps(s: np.ndarray, gap_eps: float) -> np.ndarray:
    """1 / (s_i^2 - s_j^2) over the last axis pair, clamped, zero on ties"""
    diff = s[..., :, None] ** 2 - s[..., None, :] ** 2
    clamped = np.sign(diff) * np.maximum(np.abs(diff), gap_eps)
    return np.where(diff == 0, 0.0, 1.0 / np.where(diff == 0, 1.0, clamped))


def _adjoint(u: np.ndarray, s: np.ndarray, v: np.ndarray, upstream: np.ndarray,
             k: int, gap_eps: float, mode: GradMode) -> np.ndarray:
    """Batched adjoint over leading axes; u: ...×C×M, s: ...×M, v: ...×D×M"""
    m = s.shape[-1]
    vt = np.swapaxes(v, -1, -2)
    a = np.swapaxes(u, -1, -2) @ upstream @ v
    top = np.arange(m) < k

    if mode == GradMode.DETACHED:
        diag = np.diagonal(a, axis1=-2, axis2=-1) * top
        return (u * diag[..., None, :]) @ vt

    si = s[..., :, None]
    sj = s[..., None, :]
    at = np.swapaxes(a, -1, -2)
    inv = _inverse_gaps(s, gap_eps)
    ti, tj = top[:, None], top[None, :]

    kernel = np.where(ti & tj, a, 0.0)
    kernel = kernel + np.where(ti & ~tj, (a * si ** 2 + at * si * sj) * inv, 0.0)
    kernel = kernel - np.where(~ti & tj, (a * sj ** 2 + at * si * sj) * inv, 0.0)

    uk, vk = u[..., :k], v[..., :k]
    gvk = upstream @ vk @ np.swapaxes(vk, -1, -2)
    ukg = uk @ np.swapaxes(uk, -1, -2) @ upstream
    left_perp = gvk - u @ (np.swapaxes(u, -1, -2) @ gvk)
    right_perp = ukg - (ukg @ v) @ vt
    return u @ kernel @ vt + left_perp + right_perp


def truncation_backward(matrix: np.ndarray, k: int, upstream: np.ndarray, gap_eps: float = 1e-6,
                        mode: GradMode = GradMode.FULL) -> np.ndarray:
    """dL/dX given dL/dZ_k for a single C×HW matrix"""
    matrix = np.asarray(matrix, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if matrix.shape != upstream.shape or matrix.ndim != 2:
        raise ShapeError("truncation_backward needs matching matrices", matrix.shape, upstream.shape)
    if gap_eps <= 0:
        raise ValueError("gap_eps must be positive")
    _require_finite(upstream, "upstream gradient")
    result = svd(matrix)
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if k >= result.M:
        return upstream.copy()
    return _adjoint(result.U, result.S, result.V, upstream, k, gap_eps, GradMode(mode))


# =============================================================================
# Differentiable op
# =============================================================================

def topk_truncate(feature: Tensor, k: int, grad_mode: GradMode = GradMode.FULL,
                  gap_eps: float = 1e-6) -> Tensor:
    """
    Per-image Top-k reconstruction of an N×C×H×W feature batch.

    k >= min(C, HW) is the identity. An image whose feature holds NaN/Inf
    comes out as NaN so the failure stays confined to that image.
    """
    if feature.ndim != 4:
        raise ShapeError("topk_truncate expects N×C×H×W", feature.shape)
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    n, c, h, w = feature.shape
    m = min(c, h * w)
    if k >= m:
        return record("topk_truncate", feature.data.copy(), (feature,), lambda g: (g,))

    mats = feature.data.reshape(n, c, h * w).astype(np.float64)
    finite = np.isfinite(mats).all(axis=(1, 2))
    if not finite.all():
        logger.warning(f"{int((~finite).sum())} of {n} feature maps are non-finite")
    u, s, vh = np.linalg.svd(np.where(finite[:, None, None], mats, 0.0), full_matrices=False)
    v = np.swapaxes(vh, -1, -2)
    z = (u[..., :k] * s[:, None, :k]) @ vh[:, :k]
    z[~finite] = np.nan
    out = z.reshape(feature.shape).astype(feature.dtype)
    mode = GradMode(grad_mode)

    def backward(g):
        g64 = g.reshape(n, c, h * w).astype(np.float64)
        dx = _adjoint(u, s, v, np.where(finite[:, None, None], g64, 0.0), k, gap_eps, mode)
        dx[~finite] = np.nan
        return (dx.reshape(feature.shape).astype(g.dtype),)

    return record("topk_truncate", out, (feature,), backward)
