"""Representation-similarity analysis (linear CKA)"""

from .cka import (
    ActivationSet,
    cka_crossmodel,
    cka_layerwise,
    collect_activations,
    layer_activations,
    linear_cka,
    load_activations,
    save_activations,
)

__all__ = [
    "ActivationSet",
    "cka_crossmodel",
    "cka_layerwise",
    "collect_activations",
    "layer_activations",
    "linear_cka",
    "load_activations",
    "save_activations",
]
