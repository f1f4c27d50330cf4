"""
Central finite-difference gradients, used as the oracle for every analytic gradient.
"""
import logging
from typing import Callable, Union

import numpy as np

from src.domain.errors import NonFiniteError, StepSizeError
from src.engine.core.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

ScalarFunction = Callable[[Tensor], Union[Tensor, float]]


def _evaluate(f: ScalarFunction, values: np.ndarray) -> float:
    with no_grad():
        out = f(Tensor(values.copy()))
    value = out.item() if isinstance(out, Tensor) else float(out)
    if not np.isfinite(value):
        raise NonFiniteError(f"f evaluated to {value} during finite differencing")
    return value


def finite_diff_grad(f: ScalarFunction, x: Union[Tensor, np.ndarray], step: float = 1e-6) -> Tensor:
    """
    Estimate df/dx elementwise with (f(x + h e_i) - f(x - h e_i)) / 2h.

    Args:
        f: Scalar function of a tensor. Called with fresh tensors; `x` itself is never mutated.
        x: Point of evaluation.
        step: Perturbation h, must be positive.

    Returns:
        A tensor shaped like `x` holding the estimate.
    """
    if step <= 0:
        raise StepSizeError(f"finite difference step must be > 0, got {step}")

    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64, copy=True)
    flat = base.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        f_plus = _evaluate(f, base)
        flat[i] = original - step
        f_minus = _evaluate(f, base)
        flat[i] = original
        grad[i] = (f_plus - f_minus) / (2.0 * step)

    logger.debug(f"finite_diff_grad evaluated f {2 * flat.size} times")
    return Tensor(grad.reshape(base.shape))
