import logging
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

from src.domain.errors import EmptyGraphError, NonFiniteError, NonScalarLossError
from src.engine.registry.base_primitive import Context, Primitive
from src.engine.registry.primitive_registry import PrimitiveRegistry, default_registry

logger = logging.getLogger(__name__)

Scalar = Union[int, float]


class Tensor:
    """
    Dense row-major array with an optional gradient slot.

    Leaf tensors (parameters, inputs) have no producing node; tensors returned by
    `record` point at the graph node that produced them while gradients are tracked.
    """
    __slots__ = ("data", "grad", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        array = np.asarray(data, dtype=dtype)
        if array.dtype.kind not in "fu":
            array = array.astype(np.float64)
        self.data: np.ndarray = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._node: Optional["GraphNode"] = None

    # ---------- Introspection ----------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.dtype, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # ---------- Arithmetic sugar ----------

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        return record("add", [self, self._lift(other)])

    def __radd__(self, other):
        return record("add", [self._lift(other), self])

    def __sub__(self, other):
        return record("subtract", [self, self._lift(other)])

    def __rsub__(self, other):
        return record("subtract", [self._lift(other), self])

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        return record("multiply", [self, self._lift(other)])

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(1.0 / other)
        return record("divide", [self, self._lift(other)])

    def __rtruediv__(self, other):
        return record("divide", [self._lift(other), self])

    def __neg__(self):
        return record("negate", [self])

    def scale(self, factor: Scalar) -> "Tensor":
        return record("scale", [self], factor=float(factor))

    def sqrt(self) -> "Tensor":
        return record("sqrt", [self])

    def log(self) -> "Tensor":
        return record("log", [self])

    def exp(self) -> "Tensor":
        return record("exp", [self])

    def abs(self) -> "Tensor":
        return record("abs", [self])

    def relu(self) -> "Tensor":
        return record("relu", [self])

    def sum(self) -> "Tensor":
        return record("sum_all", [self])

    def mean(self) -> "Tensor":
        return record("mean_all", [self])


class GraphNode:
    """One recorded primitive application."""
    __slots__ = ("primitive", "ctx", "inputs", "output", "index", "graph", "generation")

    def __init__(self, primitive: Primitive, ctx: Context, inputs: List[Tensor], output: Tensor,
                 index: int, graph: "ComputeGraph"):
        self.primitive = primitive
        self.ctx = ctx
        self.inputs = inputs
        self.output = output
        self.index = index
        self.graph = graph
        self.generation = graph.generation


class ComputeGraph:
    """
    Ordered record of the primitives applied since the last release.
    Recording order is a valid topological order, so the reverse pass walks it backwards.
    """

    def __init__(self):
        self.nodes: List[GraphNode] = []
        self.generation = 0

    def append(self, primitive: Primitive, ctx: Context, inputs: List[Tensor], output: Tensor) -> GraphNode:
        node = GraphNode(primitive, ctx, inputs, output, len(self.nodes), self)
        self.nodes.append(node)
        return node

    def release(self) -> None:
        """Drop every recorded node; tensors produced before this point can no longer be differentiated."""
        for node in self.nodes:
            node.output._node = None
        self.nodes = []
        self.generation += 1

    def __len__(self) -> int:
        return len(self.nodes)


_active_graph = ComputeGraph()
_grad_enabled = True


def get_active_graph() -> ComputeGraph:
    return _active_graph


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    """Suppress recording; primitives still run forward."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def record(op_kind: str, inputs: Sequence[Tensor], registry: Optional[PrimitiveRegistry] = None, **params) -> Tensor:
    """
    Apply a registered primitive and append it to the active graph when any input tracks gradients.

    Raises:
        KeyError: Unknown primitive.
        ShapeMismatchError: Inputs the primitive cannot combine.
        NonFiniteError: NaN/Inf output from a primitive that declares finite output.
    """
    primitive = (registry or default_registry()).get(op_kind)
    inputs = list(inputs)
    primitive.check_shapes([t.shape for t in inputs], **params)

    ctx = Context()
    out = primitive.forward(ctx, *[t.data for t in inputs], **params)
    if primitive.finite_output and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"Primitive '{op_kind}' produced non-finite values")

    tracked = _grad_enabled and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=tracked)
    if tracked:
        result._node = _active_graph.append(primitive, ctx, inputs, result)
    return result


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """
    Populate `grad` on every leaf tensor that tracks gradients and appears in the loss's graph.

    Gradients accumulate into existing `grad` slots; leaves the loss does not reach get zeros.
    The graph is released afterwards unless `retain_graph` is set.
    """
    if loss.size != 1:
        raise NonScalarLossError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None or node.generation != node.graph.generation:
        raise EmptyGraphError("Loss has no recorded operations (was it computed under no_grad or already released?)")

    graph = node.graph
    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    visited = 0
    for current in reversed(graph.nodes[: node.index + 1]):
        grad_out = pending.pop(id(current.output), None)
        if grad_out is None:
            continue
        visited += 1
        input_grads = current.primitive.backward(current.ctx, grad_out)
        for tensor, grad_in in zip(current.inputs, input_grads):
            if grad_in is None or not tensor.requires_grad:
                continue
            if tensor._node is None:
                tensor.grad = grad_in.copy() if tensor.grad is None else tensor.grad + grad_in
            else:
                key = id(tensor)
                pending[key] = grad_in if key not in pending else pending[key] + grad_in

    for current in graph.nodes:
        for tensor in current.inputs:
            if tensor.requires_grad and tensor._node is None and tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)

    logger.debug(f"backward visited {visited}/{len(graph)} nodes")
    if not retain_graph:
        graph.release()
