"""
Eigen-CAM

Saliency from the dominant singular direction of a feature map: the row
s1 * v1^T of the C×HW matrix, sign-fixed so it sums to >= 0, negatives
clamped, then min-max normalised.

A flat projection (max == min) has no range to normalise over. It maps
to 1 where the projection is positive and 0 elsewhere, so a constant
positive feature lights the whole map and an all-zero feature stays dark.
"""

from typing import Union

import numpy as np

from ..autodiff.tensor import Tensor
from .svd import reshape_feature, svd

# spread below this fraction of the peak counts as a flat map
FLAT_RTOL = 1e-9


def eigencam_map(feature: Union[Tensor, np.ndarray]) -> np.ndarray:
    """H×W float64 map in [0, 1] for a C×H×W feature"""
    data = feature.data if isinstance(feature, Tensor) else np.asarray(feature)
    matrix = reshape_feature(data)
    height, width = data.shape[1:]
    result = svd(matrix)
    row = result.S[0] * result.V[:, 0]
    if row.sum() < 0:
        row = -row
    row = np.maximum(row, 0.0)

    lo, hi = row.min(), row.max()
    if hi - lo > FLAT_RTOL * hi:
        saliency = (row - lo) / (hi - lo)
    else:
        # flat map: lit where positive, dark otherwise
        saliency = (row > 0).astype(np.float64)
    return saliency.reshape(height, width)


def upsample_nearest(saliency: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of an h×w map to height×width"""
    h, w = saliency.shape
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return saliency[rows[:, None], cols[None, :]]


def to_gray8(saliency: np.ndarray) -> np.ndarray:
    """[0, 1] map -> uint8 [0, 255]"""
    return np.clip(np.rint(saliency * 255.0), 0, 255).astype(np.uint8)
