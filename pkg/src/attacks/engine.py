"""
Attack Engine

Iterative sign-gradient attacks (I-FGSM, MI-FGSM, NI-FGSM) under an L-inf
budget, with the transform plugins and the optional SVD logit-fusion hook.

Per step, the gradient oracle composes: SI copies -> DI per copy -> loss
-> backward -> TI on the gradient. VT adds the previous step's variance
before momentum normalisation. An image whose gradient turns non-finite
stops updating and carries an error string; the rest of the batch goes on.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from ..autodiff import Tensor, backward
from ..core.exceptions import ShapeError
from ..core.models import AttackConfig, AttackMethod
from ..nn.models import LayerGraph
from .fusion import attack_loss
from .rng import image_rngs
from .transforms import transform_di, transform_si, transform_ti, variance_tuning

logger = logging.getLogger(__name__)

PIXEL_MIN = 0.0
PIXEL_MAX = 255.0
LINF_SLACK = 1e-4


@dataclass
class AdversarialBatch:
    """Clean and adversarial images for one (source model, attack) run"""
    clean: np.ndarray
    adv: np.ndarray
    labels: np.ndarray
    source_model_id: str
    attack_name: str = "custom"
    sample_ids: Optional[np.ndarray] = None
    errors: List[Optional[str]] = field(default_factory=list)
    config: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.clean.shape != self.adv.shape or self.clean.ndim != 4:
            raise ShapeError("clean and adversarial batches must both be N×C×H×W", self.clean.shape, self.adv.shape)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.sample_ids is None:
            self.sample_ids = np.arange(len(self.clean), dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        if not self.errors:
            self.errors = [None] * len(self.clean)

    def __len__(self) -> int:
        return len(self.clean)

    def subset(self, count: int) -> "AdversarialBatch":
        """First `count` images"""
        return AdversarialBatch(
            clean=self.clean[:count],
            adv=self.adv[:count],
            labels=self.labels[:count],
            source_model_id=self.source_model_id,
            attack_name=self.attack_name,
            sample_ids=self.sample_ids[:count],
            errors=list(self.errors[:count]),
            config=self.config,
        )

    @property
    def linf_per_image(self) -> np.ndarray:
        diff = np.abs(self.adv.astype(np.float64) - self.clean.astype(np.float64))
        return diff.reshape(len(self), -1).max(axis=1) if len(self) else np.zeros(0)

    @property
    def n_failed(self) -> int:
        return sum(e is not None for e in self.errors)

    def check_budget(self, epsilon: float) -> bool:
        """True when every image is inside the L-inf ball and the pixel range"""
        return bool(
            np.all(self.linf_per_image <= epsilon + LINF_SLACK)
            and self.adv.min(initial=PIXEL_MIN) >= PIXEL_MIN
            and self.adv.max(initial=PIXEL_MAX) <= PIXEL_MAX
        )

    def to_blobs(self) -> Dict[str, np.ndarray]:
        meta = {
            "source_model_id": self.source_model_id,
            "attack_name": self.attack_name,
            "errors": self.errors,
            "config": self.config,
        }
        return {
            "clean": self.clean.astype(np.float32),
            "adv": self.adv.astype(np.float32),
            "labels": self.labels,
            "sample_ids": self.sample_ids,
            "linf": self.linf_per_image,
            "__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8),
        }

    @classmethod
    def from_blobs(cls, blobs: Dict[str, np.ndarray]) -> "AdversarialBatch":
        meta = json.loads(blobs["__meta__"].tobytes().decode("utf-8"))
        return cls(
            clean=blobs["clean"],
            adv=blobs["adv"],
            labels=blobs["labels"],
            source_model_id=meta["source_model_id"],
            attack_name=meta.get("attack_name", "custom"),
            sample_ids=blobs["sample_ids"],
            errors=meta.get("errors") or [],
            config=meta.get("config") or {},
        )


# =============================================================================
# Step primitives
# =============================================================================

def _per_image_l1(g: np.ndarray) -> np.ndarray:
    return np.abs(g).reshape(len(g), -1).sum(axis=1).reshape((len(g),) + (1,) * (g.ndim - 1))


def step_momentum(g_prev: np.ndarray, g: np.ndarray, mu: float) -> np.ndarray:
    """g_acc = mu * g_prev + g / ||g||_1 per image; all-zero gradients pass unscaled"""
    if g_prev.shape != g.shape:
        raise ShapeError("momentum buffers differ", g_prev.shape, g.shape)
    norm = _per_image_l1(g)
    normalised = np.divide(g, norm, out=np.array(g, copy=True), where=norm > 0)
    return mu * g_prev + normalised


def project_clip(x_adv: np.ndarray, x_clean: np.ndarray, epsilon: float,
                 lo: float = PIXEL_MIN, hi: float = PIXEL_MAX) -> np.ndarray:
    """Clamp into the epsilon ball around x_clean, then into [lo, hi]"""
    if x_adv.shape != x_clean.shape:
        raise ShapeError("project_clip needs matching batches", x_adv.shape, x_clean.shape)
    return np.clip(np.clip(x_adv, x_clean - epsilon, x_clean + epsilon), lo, hi)


# =============================================================================
# Gradient oracle
# =============================================================================

def loss_gradient(model: LayerGraph, x: np.ndarray, labels: np.ndarray, config: AttackConfig,
                  rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Gradient of the attack loss at x with SI, DI and TI applied"""
    si, di, ti = config.transform("si"), config.transform("di"), config.transform("ti")
    x_t = Tensor(x, requires_grad=True)
    copies = transform_si(x_t, si.m) if si else [x_t]

    total = None
    for copy in copies:
        inputs = transform_di(copy, di.p, rngs, di.min_scale) if di else copy
        loss = attack_loss(model, inputs, labels, config.svd_hook)
        total = loss if total is None else total + loss
    if len(copies) > 1:
        total = total / len(copies)
    with np.errstate(invalid="ignore", over="ignore"):
        backward(total)
    grad = x_t.grad
    return transform_ti(grad, ti.kernel_len) if ti else grad


# =============================================================================
# Loop
# =============================================================================

def run_attack(
    model: LayerGraph,
    images: np.ndarray,
    labels: np.ndarray,
    config: AttackConfig,
    sample_ids: Optional[np.ndarray] = None,
    progress: bool = False,
    on_step: Optional[Callable[[int, np.ndarray], None]] = None,
) -> AdversarialBatch:
    """
    Craft adversarial examples for `images` (pixel units) on `model`.

    `on_step(step, x_adv)` is called after every update with a copy of the
    current batch.
    """
    x_clean = np.asarray(images).astype(model.dtype)
    labels = np.asarray(labels, dtype=np.int64)
    if x_clean.ndim != 4 or len(labels) != len(x_clean):
        raise ShapeError("run_attack expects N×C×H×W images and N labels", x_clean.shape, labels.shape)
    n = len(x_clean)
    sample_ids = np.arange(n, dtype=np.int64) if sample_ids is None else np.asarray(sample_ids, dtype=np.int64)
    rngs = image_rngs(config.seed, sample_ids)

    eps, alpha, mu = config.epsilon, config.alpha, config.momentum_mu
    vt = config.transform("vt")
    broadcast = (n,) + (1,) * (x_clean.ndim - 1)

    x_adv = x_clean.copy()
    g_acc = np.zeros_like(x_clean)
    variance = np.zeros_like(x_clean)
    active = np.ones(n, dtype=bool)
    errors: List[Optional[str]] = [None] * n

    def oracle(point: np.ndarray) -> np.ndarray:
        return loss_gradient(model, point, labels, config, rngs)

    for step in tqdm(range(1, config.steps + 1), desc=config.name, disable=not progress, leave=False):
        if config.method == AttackMethod.NIFGSM:
            point = x_adv + alpha * mu * g_acc
        else:
            point = x_adv
        grad = oracle(point)

        if vt is not None:
            next_variance = variance_tuning(oracle, point, eps, vt.beta, vt.n, rngs, base_grad=grad)
            grad = grad + variance
            variance = next_variance

        finite = np.isfinite(grad).reshape(n, -1).all(axis=1)
        if vt is not None:
            finite &= np.isfinite(variance).reshape(n, -1).all(axis=1)
        for i in np.flatnonzero(active & ~finite):
            errors[i] = f"non-finite gradient at step {step}"
            logger.warning(f"{config.name}: image {int(sample_ids[i])} stopped, non-finite gradient at step {step}")
        active &= finite
        mask = active.reshape(broadcast)
        grad = np.where(mask, grad, 0)
        variance = np.where(mask, variance, 0)

        if config.method == AttackMethod.IFGSM:
            direction = grad
        else:
            g_acc = step_momentum(g_acc, grad, mu)
            direction = g_acc

        stepped = project_clip(x_adv + alpha * np.sign(direction), x_clean, eps)
        x_adv = np.where(mask, stepped, x_adv).astype(x_clean.dtype)
        if on_step is not None:
            on_step(step, x_adv.copy())

    batch = AdversarialBatch(
        clean=x_clean,
        adv=x_adv,
        labels=labels,
        source_model_id=model.model_id,
        attack_name=config.name,
        sample_ids=sample_ids,
        errors=errors,
        config=config.model_dump(mode="json"),
    )
    logger.debug(
        f"{config.name} on {model.model_id}: {n} images, max linf {batch.linf_per_image.max(initial=0):.3f}, "
        f"{batch.n_failed} failed"
    )
    return batch
