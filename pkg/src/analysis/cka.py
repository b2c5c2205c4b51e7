"""
Linear CKA

    cka(X, Y) = ||Y^T X||_F^2 / (||X^T X||_F * ||Y^T Y||_F)

evaluated through n×n Gram matrices in float64. Centering is opt-in;
activations are flattened per sample (C·H·W) without centering by
default.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ..core.container import read_container, write_container
from ..core.exceptions import DegenerateInputError, NonFiniteError, ShapeError, StructureError
from ..core.models import CKAReport, CKARow, CKAVariant
from ..nn.models import FC_LAYER, POOL_LAYER, LayerGraph

logger = logging.getLogger(__name__)


@dataclass
class ActivationSet:
    """n samples × d features taken from one layer of one model"""
    model_id: str
    layer_name: str
    matrix: np.ndarray
    sample_ids: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 2:
            raise ShapeError("activation set needs an n×d matrix with n >= 2", self.matrix.shape)
        if self.sample_ids.shape != (self.matrix.shape[0],):
            raise ShapeError("one sample id per activation row", self.sample_ids.shape, self.matrix.shape)
        if not np.all(np.isfinite(self.matrix)):
            raise NonFiniteError(f"activations of {self.model_id}/{self.layer_name} contain NaN or Inf")


def linear_cka(x: np.ndarray, y: np.ndarray, center: bool = False) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError("linear_cka needs two matrices with the same number of rows", x.shape, y.shape)
    if center:
        x = x - x.mean(axis=0, keepdims=True)
        y = y - y.mean(axis=0, keepdims=True)
    if not np.any(x) or not np.any(y):
        raise DegenerateInputError("linear CKA is undefined for an all-zero matrix")

    gram_x = x @ x.T
    gram_y = y @ y.T
    cross = float(np.sum(gram_x * gram_y))
    value = cross / (np.linalg.norm(gram_x) * np.linalg.norm(gram_y))
    # rounding can push a perfect match a hair past 1
    return float(min(max(value, 0.0), 1.0))


# =============================================================================
# Activations
# =============================================================================

def layer_activations(model: LayerGraph, images: np.ndarray, layer_name: str, batch_size: int = 256) -> np.ndarray:
    """n × prod(layer shape) matrix of a layer's outputs"""
    images = np.asarray(images).astype(model.dtype)
    chunks = [
        model.forward_to_layer(images[i:i + batch_size], layer_name).data.reshape(len(images[i:i + batch_size]), -1)
        for i in range(0, len(images), batch_size)
    ]
    return np.concatenate(chunks).astype(np.float64)


def collect_activations(model: LayerGraph, images: np.ndarray, layer_names: Sequence[str],
                        sample_ids: Optional[np.ndarray] = None) -> List[ActivationSet]:
    ids = np.arange(len(images)) if sample_ids is None else sample_ids
    return [
        ActivationSet(model.model_id, layer, layer_activations(model, images, layer), ids)
        for layer in layer_names
    ]


# =============================================================================
# Reports
# =============================================================================

def _check_paired(clean_ids: Optional[np.ndarray], adv_ids: Optional[np.ndarray], n_clean: int, n_adv: int) -> None:
    if n_clean != n_adv:
        raise ShapeError("clean and adversarial batches are not paired", (n_clean,), (n_adv,))
    if clean_ids is not None and adv_ids is not None and not np.array_equal(clean_ids, adv_ids):
        raise ValueError("clean and adversarial batches are not paired by sample id")


def cka_layerwise(
    model: LayerGraph,
    clean: np.ndarray,
    adv: np.ndarray,
    layer_names: Sequence[str],
    variant: CKAVariant = CKAVariant.CLEAN_VS_ADV_NO_SVD,
    clean_ids: Optional[np.ndarray] = None,
    adv_ids: Optional[np.ndarray] = None,
    center: bool = False,
) -> CKAReport:
    """Clean-vs-adversarial similarity on one model, one row per layer"""
    _check_paired(clean_ids, adv_ids, len(clean), len(adv))
    rows = []
    for layer in layer_names:
        value = linear_cka(
            layer_activations(model, clean, layer),
            layer_activations(model, adv, layer),
            center,
        )
        rows.append(CKARow(layer=layer, variant=variant, cka=value, source_model=model.model_id))
        logger.debug(f"CKA {model.model_id}/{layer} {variant.value}: {value:.4f}")
    return CKAReport(rows=rows)


def cka_crossmodel(
    source: LayerGraph,
    target: LayerGraph,
    clean: np.ndarray,
    adv_no_svd: np.ndarray,
    adv_svd: np.ndarray,
    layers: Sequence[str] = (POOL_LAYER, FC_LAYER),
    center: bool = False,
) -> CKAReport:
    """Source-vs-target similarity on clean, plain-adversarial and SVD-adversarial inputs"""
    if tuple(source.input_spec) != tuple(target.input_spec):
        raise ShapeError("source and target models take different inputs", source.input_spec, target.input_spec)
    batches = {
        CKAVariant.CLEAN: clean,
        CKAVariant.ADV_NO_SVD: adv_no_svd,
        CKAVariant.ADV_SVD: adv_svd,
    }
    rows = []
    for layer in layers:
        for variant, images in batches.items():
            value = linear_cka(
                layer_activations(source, images, layer),
                layer_activations(target, images, layer),
                center,
            )
            rows.append(CKARow(
                layer=layer, variant=variant, cka=value,
                source_model=source.model_id, target_model=target.model_id,
            ))
    return CKAReport(rows=rows)


# =============================================================================
# Activation dumps
# =============================================================================

def save_activations(sets: Sequence[ActivationSet], path: Union[str, Path]) -> Path:
    """One f64 blob per layer plus the shared sample-id table"""
    if not sets:
        raise ValueError("no activation sets to write")
    ids = sets[0].sample_ids
    blobs: Dict[str, np.ndarray] = {"sample_ids": ids}
    for s in sets:
        if not np.array_equal(s.sample_ids, ids):
            raise ValueError("activation sets in one dump must share sample ids")
        blobs[s.layer_name] = s.matrix
    meta = {"model_id": sets[0].model_id, "layers": [s.layer_name for s in sets]}
    blobs["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    return write_container(path, blobs)


def load_activations(path: Union[str, Path]) -> List[ActivationSet]:
    blobs = read_container(path)
    if "__meta__" not in blobs or "sample_ids" not in blobs:
        raise StructureError(f"{path}: not an activation dump")
    meta = json.loads(blobs["__meta__"].tobytes().decode("utf-8"))
    missing = [layer for layer in meta["layers"] if layer not in blobs]
    if missing:
        raise StructureError(f"{path}: missing activation blob for layer '{missing[0]}'")
    return [
        ActivationSet(meta["model_id"], layer, blobs[layer], blobs["sample_ids"])
        for layer in meta["layers"]
    ]
