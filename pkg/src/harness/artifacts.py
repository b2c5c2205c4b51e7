"""
Run Artifacts

Adversarial-batch containers, grayscale PGM saliency images and sweep
plots.
"""

import logging
from pathlib import Path
from typing import List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from ..attacks.engine import AdversarialBatch  # noqa: E402
from ..core.container import read_container, write_container  # noqa: E402
from ..core.exceptions import StructureError  # noqa: E402
from ..core.models import SweepPoint  # noqa: E402

logger = logging.getLogger(__name__)

BATCH_BLOBS = ("clean", "adv", "labels", "sample_ids", "__meta__")


def save_adversarial_batch(batch: AdversarialBatch, path: Union[str, Path]) -> Path:
    path = write_container(path, batch.to_blobs())
    logger.info(f"Saved {len(batch)} adversarial images ({batch.attack_name}) to {path}")
    return path


def load_adversarial_batch(path: Union[str, Path]) -> AdversarialBatch:
    blobs = read_container(path)
    missing = [name for name in BATCH_BLOBS if name not in blobs]
    if missing:
        raise StructureError(f"{path}: adversarial batch lacks blob '{missing[0]}'")
    return AdversarialBatch.from_blobs(blobs)


def write_pgm(gray: np.ndarray, path: Union[str, Path]) -> Path:
    """8-bit binary PGM (P5)"""
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError(f"PGM needs a 2-D uint8 array, got {gray.dtype} {gray.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(gray).save(path, format="PPM")
    return path


def plot_sweep(points: Sequence[SweepPoint], path: Union[str, Path], title: str = "") -> Path:
    """Line plot of mean black-box (and white-box) success along the sweep axis"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels: List[str] = [p.value for p in points]
    positions = np.arange(len(points))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(positions, [p.mean_black_box * 100 for p in points], marker="o", label="black-box")
    ax.plot(positions, [p.mean_white_box * 100 for p in points], marker="s", linestyle="--", label="white-box")
    ax.set_xticks(positions)
    ax.set_xticklabels(labels)
    ax.set_xlabel(points[0].axis.value if points else "")
    ax.set_ylabel("attack success rate (%)")
    ax.set_ylim(0, 100)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="png")
    plt.close(fig)
    return path
