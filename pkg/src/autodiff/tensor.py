"""
Tensor and Computation Graph

Dense numpy-backed tensors that record the operations producing them.
Calling backward() on a scalar walks the recorded graph in reverse
topological order and writes dLoss/dLeaf into every leaf that requires a
gradient. Gradients are overwritten on each call, never accumulated.
"""

import logging
import weakref
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.exceptions import ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

DEFAULT_DTYPE = np.float32


@dataclass(eq=False)
class Node:
    """One recorded operation: op kind, its inputs, and the closure holding
    the activations saved for the backward pass."""
    op: str
    inputs: Tuple["Tensor", ...]
    backward: BackwardFn
    output: Optional[weakref.ReferenceType] = field(default=None, repr=False)

    @property
    def output_id(self) -> Optional[int]:
        out = self.output() if self.output is not None else None
        return id(out) if out is not None else None


class Tensor:
    """
    Dense n-dimensional float array participating in reverse-mode autodiff.

    Integer or boolean input is stored as float32; float64 input keeps its
    precision so oracle computations can run in 64-bit.
    """

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None

    # -------------------------------------------------------------------------
    # Properties
    # -------------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a single-element tensor", self.shape)
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -------------------------------------------------------------------------
    # Arithmetic
    # -------------------------------------------------------------------------
    def _lift(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return record("add", a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return record("sub", a.data - b.data, (a, b), backward)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return self._lift(other) - self

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
            gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
            return ga, gb

        return record("mul", a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by constants")
        return self * (1.0 / float(other))

    def __neg__(self) -> "Tensor":
        a = self
        return record("neg", -a.data, (a,), lambda g: (-g,))

    def sum(self) -> "Tensor":
        a = self

        def backward(g):
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

        return record("sum", np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward)

    def mean(self) -> "Tensor":
        return self.sum() / self.size

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        try:
            out = a.data.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"cannot reshape to {shape}", a.shape) from exc
        return record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))

    def backward(self) -> None:
        backward(self)


def record(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op result, attaching a graph node when any input needs grads."""
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op=op, inputs=inputs, backward=backward_fn, output=weakref.ref(out))
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# =============================================================================
# Graph
# =============================================================================

class Graph:
    """Topologically ordered view of the operations behind one output."""

    def __init__(self, order: List[Tensor], leaves: List[Tensor]):
        self._order = order
        self.leaves = leaves

    @property
    def nodes(self) -> List[Node]:
        return [t.node for t in self._order]

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        order: List[Tensor] = []
        leaves: List[Tensor] = []
        seen = set()
        # iterative post-order DFS; inputs always precede their consumers
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in seen:
                continue
            seen.add(id(tensor))
            if tensor.node is None:
                if tensor.requires_grad:
                    leaves.append(tensor)
                continue
            stack.append((tensor, True))
            for parent in reversed(tensor.node.inputs):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order, leaves)

    def run(self, root: Tensor) -> None:
        grads = {id(root): np.ones(root.shape, dtype=root.dtype)}
        for tensor in reversed(self._order):
            upstream = grads.pop(id(tensor), None)
            if upstream is None:
                continue
            input_grads = tensor.node.backward(upstream)
            for parent, g in zip(tensor.node.inputs, input_grads):
                if g is None or not parent.requires_grad:
                    continue
                g = np.asarray(g, dtype=parent.dtype)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        for leaf in self.leaves:
            g = grads.get(id(leaf))
            leaf.grad = np.zeros(leaf.shape, dtype=leaf.dtype) if g is None else np.ascontiguousarray(g)


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad leaf reachable from `loss`."""
    if loss.size != 1:
        raise ShapeError("backward needs a scalar loss", loss.shape)
    if not loss.requires_grad:
        raise ValueError("loss is not connected to any leaf requiring grad")
    graph = Graph.trace(loss)
    graph.run(loss)
