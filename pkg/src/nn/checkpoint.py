"""
Checkpoint Serialization

Weights go into the shared binary container, one f32 blob per parameter in
layer order. Architecture id, class count and training metadata ride along
in a trailing `__meta__` blob (u8 tag, UTF-8 JSON) so a file is
self-describing.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from ..core.container import VERSION, read_container, write_container
from ..core.exceptions import StructureError

logger = logging.getLogger(__name__)

META_BLOB = "__meta__"


@dataclass
class Checkpoint:
    """Named weight blobs plus what is needed to rebuild the graph"""
    arch_id: str
    num_classes: int
    input_spec: tuple
    weights: Dict[str, np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def from_model(cls, model) -> "Checkpoint":
        return cls(
            arch_id=model.arch_id,
            num_classes=model.num_classes,
            input_spec=tuple(model.input_spec),
            weights={name: t.data.astype(np.float32) for name, t in model.parameters().items()},
            metadata=dict(model.metadata),
        )

    def to_blobs(self) -> Dict[str, np.ndarray]:
        meta = {
            "arch_id": self.arch_id,
            "num_classes": self.num_classes,
            "input_spec": list(self.input_spec),
            "metadata": self.metadata,
        }
        blobs = dict(self.weights)
        blobs[META_BLOB] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
        return blobs

    def to_model(self):
        from .models import build_model

        model = build_model(self.arch_id, self.num_classes, input_spec=tuple(self.input_spec))
        params = model.parameters()
        expected, found = list(params), list(self.weights)
        for position, name in enumerate(expected):
            if position >= len(found):
                raise StructureError(
                    f"checkpoint has {len(found)} weight blobs, {self.arch_id} needs {len(expected)}; "
                    f"missing layer '{name}'"
                )
            if found[position] != name:
                raise StructureError(f"blob {position} is '{found[position]}', expected layer '{name}'")
            blob = self.weights[name]
            if blob.shape != params[name].shape:
                raise StructureError(
                    f"layer '{name}' has shape {blob.shape}, expected {params[name].shape}"
                )
            params[name].data = blob.astype(np.float32)
        if len(found) > len(expected):
            raise StructureError(
                f"checkpoint has {len(found)} weight blobs, {self.arch_id} needs {len(expected)}; "
                f"unexpected layer '{found[len(expected)]}'"
            )
        model.metadata = dict(self.metadata)
        return model


def save_checkpoint(model_or_checkpoint, path: Union[str, Path]) -> Path:
    checkpoint = (
        model_or_checkpoint if isinstance(model_or_checkpoint, Checkpoint)
        else Checkpoint.from_model(model_or_checkpoint)
    )
    path = write_container(path, checkpoint.to_blobs())
    logger.info(f"Saved {checkpoint.arch_id} checkpoint to {path}")
    return path


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    blobs = read_container(path)
    if META_BLOB not in blobs:
        raise StructureError(f"{path}: no '{META_BLOB}' blob, cannot tell the architecture")
    meta = json.loads(blobs.pop(META_BLOB).tobytes().decode("utf-8"))
    return Checkpoint(
        arch_id=meta["arch_id"],
        num_classes=int(meta["num_classes"]),
        input_spec=tuple(meta["input_spec"]),
        weights=blobs,
        metadata=meta.get("metadata", {}),
    )


def load_checkpoint(path: Union[str, Path]):
    """Rebuild the LayerGraph stored at `path`"""
    return read_checkpoint(path).to_model()
