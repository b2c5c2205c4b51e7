"""Counter-based per-image random streams"""

from typing import Iterable, List

import numpy as np


def image_rng(seed: int, index: int) -> np.random.Generator:
    """Stream for one image, keyed by (seed, global image index)"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def image_rngs(seed: int, indices: Iterable[int]) -> List[np.random.Generator]:
    return [image_rng(seed, i) for i in indices]
