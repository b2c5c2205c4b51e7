"""
Differentiable Primitives

Forward functions for the layers the CNNs, the SVD branch and the attack
losses are built from. Each primitive records a graph node whose backward
closure holds the activations it saved during the forward pass.

Convolution is cross-correlation (no kernel flip). Output spatial size is
floor((H + 2*pad - k) / stride) + 1.
"""

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core.exceptions import LabelRangeError, ShapeError
from .tensor import Tensor, record


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _windows(data: np.ndarray, window: int, stride: int) -> np.ndarray:
    """View of shape (N, C, Ho, Wo, k, k) over the last two axes."""
    view = sliding_window_view(data, (window, window), axis=(2, 3))
    return view[:, :, ::stride, ::stride]


def _scatter_windows(grad_windows: np.ndarray, out_shape, window: int, stride: int, dtype) -> np.ndarray:
    """Adjoint of _windows: add (N, C, Ho, Wo, k, k) contributions back."""
    result = np.zeros(out_shape, dtype=dtype)
    ho, wo = grad_windows.shape[2], grad_windows.shape[3]
    for i in range(window):
        for j in range(window):
            result[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += grad_windows[..., i, j]
    return result


# =============================================================================
# Convolution / dense
# =============================================================================

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW batch with an OCkk kernel."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OCkk weight", x.shape, weight.shape)
    n, c, h, w = x.shape
    out_c, in_c, kh, kw = weight.shape
    if in_c != c:
        raise ShapeError("conv2d channel mismatch", x.shape, weight.shape)
    if kh != kw:
        raise ShapeError("conv2d needs a square kernel", weight.shape)
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d invalid stride={stride} pad={pad}", x.shape)
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError("conv2d kernel larger than padded input", x.shape, weight.shape)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (out_c,):
            raise ShapeError("conv2d bias must have one entry per output channel", bias.shape, weight.shape)

    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _windows(padded, kh, stride)
    out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dcols = np.tensordot(g, weight.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
            gpad = _scatter_windows(dcols, padded.shape, kh, stride, np.result_type(g, x.data))
            gx = gpad[:, :, pad:pad + h, pad:pad + w]
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", out, inputs, backward)


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map N×D · D×M + M."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError("dense inner dimensions differ", x.shape, weight.shape)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError("dense bias size mismatch", bias.shape, weight.shape)
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("dense", out, inputs, backward)


# =============================================================================
# Nonlinearities and pooling
# =============================================================================

def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)
    return record("relu", out, (x,), lambda g: (g * mask,))


def pool2d(x: Tensor, kind: str, window: int, stride: Optional[int] = None) -> Tensor:
    """Average or max pooling over square windows."""
    x = _as_tensor(x)
    stride = stride or window
    if x.ndim != 4:
        raise ShapeError("pool2d expects NCHW input", x.shape)
    n, c, h, w = x.shape
    if window < 1 or window > h or window > w:
        raise ShapeError(f"pool window {window} larger than input", x.shape)
    if kind not in ("avg", "max"):
        raise ValueError(f"unknown pool kind '{kind}'")

    windows = _windows(x.data, window, stride)
    ho, wo = windows.shape[2], windows.shape[3]
    if kind == "avg":
        out = windows.mean(axis=(-2, -1))

        def backward(g):
            spread = np.broadcast_to((g / (window * window))[..., None, None], (n, c, ho, wo, window, window))
            return (_scatter_windows(spread, x.shape, window, stride, g.dtype),)
    else:
        flat = windows.reshape(n, c, ho, wo, window * window)
        argmax = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]

        def backward(g):
            onehot = (np.arange(window * window) == argmax[..., None]).reshape(n, c, ho, wo, window, window)
            return (_scatter_windows(onehot * g[..., None, None], x.shape, window, stride, g.dtype),)

    return record(f"{kind}_pool", np.ascontiguousarray(out, dtype=x.dtype), (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over all spatial positions, N×C×H×W -> N×C."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError("global_avg_pool expects NCHW input", x.shape)
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return record("global_avg_pool", out.astype(x.dtype), (x,), backward)


# =============================================================================
# Resampling (input diversity)
# =============================================================================

def resample_nearest(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """
    Per-image pixel gather. rows (N×Ho) and cols (N×Wo) hold source indices;
    -1 marks zero padding. Covers nearest-neighbour resize plus padding.
    """
    x = _as_tensor(x)
    n, c, h, w = x.shape
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.shape[0] != n or cols.shape[0] != n:
        raise ShapeError("resample index tables must have one row per image", rows.shape, cols.shape)
    if rows.max(initial=-1) >= h or cols.max(initial=-1) >= w:
        raise ShapeError("resample index out of range", rows.shape, x.shape)

    valid = ((rows >= 0)[:, :, None] & (cols >= 0)[:, None, :])[:, None]
    index = (
        np.arange(n)[:, None, None, None],
        np.arange(c)[None, :, None, None],
        np.clip(rows, 0, None)[:, None, :, None],
        np.clip(cols, 0, None)[:, None, None, :],
    )
    out = np.where(valid, x.data[index], 0).astype(x.dtype)

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, index, np.where(valid, g, 0))
        return (gx,)

    return record("resample_nearest", out, (x,), backward)


# =============================================================================
# Loss
# =============================================================================

def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean of -log softmax(logits)[label], stabilised by max-subtraction."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy expects N×C logits and N labels", logits.shape, labels.shape)
    n, num_classes = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelRangeError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = (log_norm - shifted[rows, labels]).mean()

    def backward(g):
        probs = np.exp(shifted - log_norm[:, None])
        probs[rows, labels] -= 1.0
        return (probs * (g / n),)

    return record("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), backward)
