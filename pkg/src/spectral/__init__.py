"""SVD of feature maps, Top-k truncation and Eigen-CAM"""

from .svd import (
    SVDResult,
    reshape_feature,
    restore_feature,
    svd,
    topk_reconstruct,
    topk_truncate,
    truncation_backward,
)
from .eigencam import eigencam_map, to_gray8, upsample_nearest

__all__ = [
    "SVDResult",
    "reshape_feature",
    "restore_feature",
    "svd",
    "topk_reconstruct",
    "topk_truncate",
    "truncation_backward",
    "eigencam_map",
    "to_gray8",
    "upsample_nearest",
]
