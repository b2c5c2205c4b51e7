"""
Supervised Training

Mini-batch SGD with momentum 0.9 and seeded shuffling.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from tqdm import tqdm

from ..autodiff import Tensor, backward, cross_entropy
from ..core.exceptions import DatasetError, LabelRangeError
from ..core.models import EpochRecord, TrainingMetrics
from ..harness.dataset import Dataset
from .checkpoint import Checkpoint
from .models import LayerGraph

logger = logging.getLogger(__name__)


class SGDMomentum:
    """Heavy-ball SGD: v <- mu*v + g ; w <- w - lr*v"""

    def __init__(self, params: Dict[str, Tensor], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self._velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        for name, tensor in self.params.items():
            if tensor.grad is None:
                continue
            v = self._velocity[name]
            v *= self.momentum
            v += tensor.grad
            tensor.data -= self.lr * v


@dataclass
class TrainingResult:
    checkpoint: Checkpoint
    metrics: TrainingMetrics


def evaluate_accuracy(model: LayerGraph, dataset: Dataset, batch_size: int = 256) -> float:
    preds = model.predict(dataset.float_images(model.dtype), batch_size)
    return float((preds == dataset.labels).mean())


def train(
    model: LayerGraph,
    dataset: Dataset,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
    test_set: Optional[Dataset] = None,
    progress: bool = False,
) -> TrainingResult:
    """Train `model` in place and return its checkpoint plus per-epoch metrics"""
    if len(dataset) == 0:
        raise DatasetError("cannot train on an empty dataset")
    if int(dataset.labels.max()) >= model.num_classes:
        raise LabelRangeError(
            f"dataset has label {int(dataset.labels.max())} but {model.arch_id} has {model.num_classes} classes"
        )

    metrics = TrainingMetrics(arch_id=model.arch_id, seed=seed, lr=lr)
    rng = np.random.default_rng(seed)
    images = dataset.float_images(model.dtype)
    params = model.parameters()
    optimizer = SGDMomentum(params, lr)

    model.requires_grad_(True)
    try:
        for epoch in tqdm(range(1, epochs + 1), desc=f"train {model.arch_id}", disable=not progress):
            order = rng.permutation(len(dataset))
            total_loss, correct = 0.0, 0
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                logits = model.forward_full(images[idx])
                loss = cross_entropy(logits, dataset.labels[idx])
                backward(loss)
                optimizer.step()
                total_loss += loss.item() * len(idx)
                correct += int((logits.data.argmax(axis=1) == dataset.labels[idx]).sum())

            record = EpochRecord(
                epoch=epoch,
                loss=total_loss / len(dataset),
                train_acc=correct / len(dataset),
                test_acc=evaluate_accuracy(model, test_set) if test_set is not None else None,
            )
            metrics.epochs.append(record)
            logger.info(
                f"{model.arch_id} epoch {epoch}/{epochs}: loss={record.loss:.4f} "
                f"train_acc={record.train_acc:.3f}"
                + (f" test_acc={record.test_acc:.3f}" if record.test_acc is not None else "")
            )
    finally:
        model.requires_grad_(False)

    model.metadata.update({
        "epochs": epochs,
        "seed": seed,
        "final_accuracy": metrics.final_test_acc if metrics.final_test_acc is not None else metrics.final_train_acc,
    })
    return TrainingResult(checkpoint=Checkpoint.from_model(model), metrics=metrics)
