from abc import ABC, abstractmethod
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.domain.errors import ShapeMismatchError


class Context:
    """Per-call scratch space a primitive fills during forward and reads during backward."""

    def __init__(self):
        self.saved_tensors: Tuple[np.ndarray, ...] = ()
        self.params: Dict[str, Any] = {}

    def save_for_backward(self, *arrays: np.ndarray) -> None:
        self.saved_tensors = self.saved_tensors + tuple(arrays)


class Primitive(BaseModel, ABC):
    """
    Abstract base class for differentiable primitives.
    Instances are stateless; everything a call needs for its reverse pass lives in the Context.
    """
    model_config = ConfigDict(frozen=True)

    name: str = Field(..., description="Registry key of the primitive")
    description: str = Field(..., description="What the primitive computes")
    arity: int = Field(1, description="Number of tensor inputs")
    finite_output: bool = Field(True, description="Whether outputs are checked for NaN/Inf")

    def check_shapes(self, shapes: Sequence[Tuple[int, ...]], **params) -> None:
        """
        Validate input extents before forward runs.

        Raises:
            ShapeMismatchError: If the extents cannot be combined by this primitive.
        """
        if len(shapes) != self.arity:
            raise ShapeMismatchError(self.name, shapes, f"expected {self.arity} inputs")

    @abstractmethod
    def forward(self, ctx: Context, *arrays: np.ndarray, **params) -> np.ndarray:
        pass

    @abstractmethod
    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        """
        Map the gradient of the output to one gradient per input (None where not needed).
        """
        pass


def broadcast_compatible(a: Tuple[int, ...], b: Tuple[int, ...]) -> bool:
    """Equal extents, or one shape is a trailing suffix of the other (scalar and per-channel operands)."""
    if a == b:
        return True
    shorter, longer = (a, b) if len(a) <= len(b) else (b, a)
    return longer[len(longer) - len(shorter):] == shorter


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the leading axes that broadcasting added."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead))).reshape(shape)


class BinaryPrimitive(Primitive, ABC):
    arity: int = 2

    def check_shapes(self, shapes: Sequence[Tuple[int, ...]], **params) -> None:
        super().check_shapes(shapes, **params)
        if not broadcast_compatible(tuple(shapes[0]), tuple(shapes[1])):
            raise ShapeMismatchError(self.name, shapes)
