"""
CNN Architectures

Three small, architecturally distinct CNNs over 3×32×32 inputs. Every
network has the same named layers:

    input_norm -> block1 -> block2 -> block3 -> block4 -> pool -> fc

so layer-choice ablations and CKA comparisons line up across models.
"""

import copy
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..autodiff import Tensor
from ..core.exceptions import ConfigError, ShapeError
from .layers import ConvBlock, Dense, GlobalPool, Layer, PoolSpec, Rescale, he_normal, zeros

logger = logging.getLogger(__name__)

DEFAULT_INPUT_SPEC = (3, 32, 32)


@dataclass(frozen=True)
class BlockSpec:
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 1
    pool: Optional[PoolSpec] = None


# block1..block4 per architecture; they differ in depth of pooling, width and
# kernel size so transfer between them is not trivial.
ARCHITECTURES: Dict[str, Tuple[BlockSpec, ...]] = {
    "convnet_a": (
        BlockSpec(16, 3, pool=PoolSpec("max", 2)),
        BlockSpec(32, 3),
        BlockSpec(32, 3, pool=PoolSpec("max", 2)),
        BlockSpec(64, 3),
    ),
    "convnet_b": (
        BlockSpec(24, 5, pad=2, pool=PoolSpec("avg", 2)),
        BlockSpec(32, 3),
        BlockSpec(48, 3, pool=PoolSpec("max", 2)),
        BlockSpec(48, 3, pool=PoolSpec("max", 2)),
    ),
    "convnet_c": (
        BlockSpec(16, 3, stride=2),
        BlockSpec(24, 3),
        BlockSpec(48, 3, pool=PoolSpec("max", 2)),
        BlockSpec(64, 3, stride=2),
    ),
}

BLOCK_NAMES = ("block1", "block2", "block3", "block4")
POOL_LAYER = "pool"
FC_LAYER = "fc"


class LayerGraph:
    """Ordered, named sequence of differentiable layers"""

    def __init__(self, arch_id: str, layers: Sequence[Layer], input_spec: Tuple[int, int, int], num_classes: int):
        names = [layer.name for layer in layers]
        if len(set(names)) != len(names):
            raise ConfigError(f"layer names must be unique: {names}")
        self.arch_id = arch_id
        self.layers: List[Layer] = list(layers)
        self.input_spec = tuple(input_spec)
        self.num_classes = num_classes
        self.metadata: Dict[str, object] = {}
        self._index = {name: i for i, name in enumerate(names)}
        self._shapes = self._infer_shapes()

    def __repr__(self) -> str:
        return f"LayerGraph(arch_id={self.arch_id!r}, layers={self.layer_names})"

    # -------------------------------------------------------------------------
    # Introspection
    # -------------------------------------------------------------------------
    @property
    def layer_names(self) -> List[str]:
        return [layer.name for layer in self.layers]

    @property
    def dtype(self) -> np.dtype:
        params = self.parameters()
        return next(iter(params.values())).dtype if params else np.dtype(np.float32)

    def parameters(self) -> Dict[str, Tensor]:
        return {
            f"{layer.name}.{pname}": tensor
            for layer in self.layers
            for pname, tensor in layer.params().items()
        }

    def layer_output_shape(self, layer_name: str) -> Tuple[int, ...]:
        return self._shapes[self._layer_index(layer_name)]

    def _infer_shapes(self) -> List[Tuple[int, ...]]:
        shapes, shape = [], self.input_spec
        for layer in self.layers:
            shape = layer.output_shape(shape)
            shapes.append(tuple(shape))
        return shapes

    def _layer_index(self, layer_name: str) -> int:
        try:
            return self._index[layer_name]
        except KeyError:
            raise ConfigError(
                f"unknown layer '{layer_name}' for {self.arch_id}; valid layers: {', '.join(self.layer_names)}"
            ) from None

    # -------------------------------------------------------------------------
    # Forward passes
    # -------------------------------------------------------------------------
    def _as_batch(self, batch: Union[Tensor, np.ndarray]) -> Tensor:
        batch = batch if isinstance(batch, Tensor) else Tensor(batch)
        if batch.ndim != 4 or tuple(batch.shape[1:]) != self.input_spec:
            raise ShapeError(f"{self.arch_id} expects N×{self.input_spec}", batch.shape)
        return batch

    def _run(self, x: Tensor, start: int, stop: int) -> Tensor:
        for layer in self.layers[start:stop]:
            x = layer(x)
        return x

    def forward_full(self, batch: Union[Tensor, np.ndarray]) -> Tensor:
        """Logits N×num_classes for pixel-domain input in [0, 255]"""
        return self._run(self._as_batch(batch), 0, len(self.layers))

    def forward_to_layer(self, batch: Union[Tensor, np.ndarray], layer_name: str) -> Tensor:
        """Activation emitted by `layer_name`"""
        index = self._layer_index(layer_name)
        return self._run(self._as_batch(batch), 0, index + 1)

    def forward_from_layer(self, feature: Union[Tensor, np.ndarray], layer_name: str) -> Tensor:
        """Logits computed from the output of `layer_name` by the remaining layers"""
        index = self._layer_index(layer_name)
        feature = feature if isinstance(feature, Tensor) else Tensor(feature)
        expected = self._shapes[index]
        if tuple(feature.shape[1:]) != expected:
            raise ShapeError(f"feature does not match output of '{layer_name}' (N×{expected})", feature.shape)
        return self._run(feature, index + 1, len(self.layers))

    def predict(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Argmax class ids, evaluated in chunks"""
        preds = [
            self.forward_full(images[i:i + batch_size]).data.argmax(axis=1)
            for i in range(0, len(images), batch_size)
        ]
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)

    # -------------------------------------------------------------------------
    # Copies
    # -------------------------------------------------------------------------
    def requires_grad_(self, flag: bool = True) -> "LayerGraph":
        for tensor in self.parameters().values():
            tensor.requires_grad = flag
            tensor.grad = None
        return self

    def copy(self) -> "LayerGraph":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "LayerGraph":
        """Copy with every parameter cast, e.g. to float64 for oracle tests"""
        clone = self.copy()
        for tensor in clone.parameters().values():
            tensor.data = tensor.data.astype(dtype)
        return clone

    @property
    def model_id(self) -> str:
        return str(self.metadata.get("model_id", self.arch_id))


def build_model(arch_id: str, num_classes: int = 10, seed: int = 0,
                input_spec: Tuple[int, int, int] = DEFAULT_INPUT_SPEC) -> LayerGraph:
    """Instantiate an architecture with deterministic He-initialised weights"""
    if arch_id not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture '{arch_id}'; known: {', '.join(sorted(ARCHITECTURES))}")
    if num_classes < 2:
        raise ConfigError("num_classes must be at least 2")

    rng = np.random.default_rng(seed)
    layers: List[Layer] = [Rescale("input_norm")]
    in_channels = input_spec[0]
    for name, spec in zip(BLOCK_NAMES, ARCHITECTURES[arch_id]):
        fan_in = in_channels * spec.kernel * spec.kernel
        weight = he_normal(rng, (spec.out_channels, in_channels, spec.kernel, spec.kernel), fan_in)
        layers.append(ConvBlock(name, weight, zeros((spec.out_channels,)), spec.stride, spec.pad, spec.pool))
        in_channels = spec.out_channels
    layers.append(GlobalPool(POOL_LAYER))
    layers.append(Dense(FC_LAYER, he_normal(rng, (in_channels, num_classes), in_channels), zeros((num_classes,))))

    model = LayerGraph(arch_id, layers, input_spec, num_classes)
    model.metadata.update({"seed": seed, "epochs": 0})
    logger.debug(f"Built {arch_id} with shapes {dict(zip(model.layer_names, model._shapes))}")
    return model
