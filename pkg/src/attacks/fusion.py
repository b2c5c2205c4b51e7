"""
SVD Logit Fusion

The hooked layer's feature X_l feeds two continuations of the same
network: the untouched one (logits X_K) and one fed with its Top-k
reconstruction Z_l (logits Z_k). The attack objective uses

    beta * X_K + (1 - beta) * Z_k
"""

from typing import Optional, Sequence

from ..autodiff import Tensor, cross_entropy
from ..core.models import SvdHook
from ..nn.models import LayerGraph
from ..spectral import topk_truncate


def fuse(original: Tensor, decomposed: Tensor, beta: float) -> Tensor:
    return original * beta + decomposed * (1.0 - beta)


def fused_logits(model: LayerGraph, x: Tensor, hook: SvdHook) -> Tensor:
    feature = model.forward_to_layer(x, hook.layer_name)
    original = model.forward_from_layer(feature, hook.layer_name)
    truncated = topk_truncate(feature, hook.k, hook.grad_mode, hook.gap_eps)
    decomposed = model.forward_from_layer(truncated, hook.layer_name)
    return fuse(original, decomposed, hook.beta_fusion)


def attack_loss(model: LayerGraph, x: Tensor, labels: Sequence[int], hook: Optional[SvdHook] = None) -> Tensor:
    """Mean cross-entropy of fused (or plain) logits, to be maximised"""
    logits = fused_logits(model, x, hook) if hook is not None else model.forward_full(x)
    return cross_entropy(logits, labels)
