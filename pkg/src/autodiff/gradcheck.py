"""
Gradient Verification

Compares reverse-mode gradients against central finite differences on a
seeded sample of coordinates.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .tensor import Tensor, backward

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    """Outcome of one gradient check"""
    max_rel_err: float
    passed: bool
    n_checked: int
    non_finite: int = 0
    worst_index: Optional[Tuple[int, ...]] = None


def grad_check(
    fn: Callable[[Tensor], Tensor],
    point,
    eps: float = 1e-6,
    tol: float = 1e-4,
    n_coords: int = 20,
    seed: int = 0,
    atol: float = 1e-8,
    reference_dtype=np.float64,
) -> GradCheckReport:
    """
    Check backward() of `fn` at `point`.

    The analytic gradient is taken in the point's own precision. Finite differences are
    evaluated in `reference_dtype` (64-bit by default) so a 32-bit gradient is
    judged against a clean finite-difference reference. Components where
    both values are below `atol` count as exact agreement.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(point.data if isinstance(point, Tensor) else point)

    x = Tensor(base.copy(), requires_grad=True)
    backward(fn(x))
    analytic = x.grad

    rng = np.random.default_rng(seed)
    count = min(n_coords, base.size)
    coords = np.sort(rng.choice(base.size, size=count, replace=False))

    shifted = base.astype(reference_dtype)
    worst, worst_index, non_finite = 0.0, None, 0
    for flat_index in coords:
        original = shifted.flat[flat_index]
        shifted.flat[flat_index] = original + eps
        f_plus = fn(Tensor(shifted.copy())).item()
        shifted.flat[flat_index] = original - eps
        f_minus = fn(Tensor(shifted.copy())).item()
        shifted.flat[flat_index] = original

        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            non_finite += 1
            continue

        numeric = (f_plus - f_minus) / (2.0 * eps)
        exact = float(analytic.flat[flat_index])
        scale = max(abs(exact), abs(numeric))
        err = 0.0 if scale < atol else abs(exact - numeric) / scale
        if err > worst:
            worst = err
            worst_index = tuple(int(i) for i in np.unravel_index(flat_index, base.shape))

    passed = non_finite == 0 and worst <= tol
    if not passed:
        logger.debug(f"grad_check failed: max_rel_err={worst:.3e} at {worst_index}, non_finite={non_finite}")
    return GradCheckReport(
        max_rel_err=worst,
        passed=passed,
        n_checked=int(count) - non_finite,
        non_finite=non_finite,
        worst_index=worst_index,
    )
