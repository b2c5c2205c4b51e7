"""Transfer attacks: I-FGSM family, transform plugins and SVD logit fusion"""

from .fusion import attack_loss, fuse, fused_logits
from .transforms import gaussian_kernel, transform_di, transform_si, transform_ti, variance_tuning
from .engine import AdversarialBatch, loss_gradient, project_clip, run_attack, step_momentum
from .presets import PRESETS, preset, preset_names
from .rng import image_rng, image_rngs

__all__ = [
    "attack_loss",
    "fuse",
    "fused_logits",
    "gaussian_kernel",
    "transform_di",
    "transform_si",
    "transform_ti",
    "variance_tuning",
    "AdversarialBatch",
    "loss_gradient",
    "project_clip",
    "run_attack",
    "step_momentum",
    "PRESETS",
    "preset",
    "preset_names",
    "image_rng",
    "image_rngs",
]
