import logging
from typing import Iterable, List

import numpy as np

from src.domain.errors import NonFiniteError, StepSizeError
from src.engine.core.tensor import Tensor

logger = logging.getLogger(__name__)


class SGD:
    """Plain gradient descent on a fixed parameter list: p <- p - lr * grad."""

    def __init__(self, params: Iterable[Tensor], lr: float):
        if lr <= 0:
            raise StepSizeError(f"learning rate must be > 0, got {lr}")
        self.params: List[Tensor] = list(params)
        self.lr = float(lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient for parameter {p.name or '<unnamed>'}")
            p.data = p.data - np.asarray(self.lr * p.grad, dtype=p.dtype)
