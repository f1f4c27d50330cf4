from typing import Optional, Tuple

import numpy as np

from ..base_primitive import BinaryPrimitive, Context, Primitive, unbroadcast


class Add(BinaryPrimitive):
    name: str = "add"
    description: str = "Elementwise sum with scalar or per-channel broadcasting."

    def forward(self, ctx: Context, a: np.ndarray, b: np.ndarray, **params) -> np.ndarray:
        ctx.params["shapes"] = (a.shape, b.shape)
        return a + b

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        sa, sb = ctx.params["shapes"]
        return unbroadcast(grad, sa), unbroadcast(grad, sb)


class Subtract(BinaryPrimitive):
    name: str = "subtract"
    description: str = "Elementwise difference a - b."

    def forward(self, ctx: Context, a: np.ndarray, b: np.ndarray, **params) -> np.ndarray:
        ctx.params["shapes"] = (a.shape, b.shape)
        return a - b

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        sa, sb = ctx.params["shapes"]
        return unbroadcast(grad, sa), unbroadcast(-grad, sb)


class Multiply(BinaryPrimitive):
    name: str = "multiply"
    description: str = "Elementwise product."

    def forward(self, ctx: Context, a: np.ndarray, b: np.ndarray, **params) -> np.ndarray:
        ctx.save_for_backward(a, b)
        return a * b

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        a, b = ctx.saved_tensors
        return unbroadcast(grad * b, a.shape), unbroadcast(grad * a, b.shape)


class Divide(BinaryPrimitive):
    name: str = "divide"
    description: str = "Elementwise quotient a / b."

    def forward(self, ctx: Context, a: np.ndarray, b: np.ndarray, **params) -> np.ndarray:
        ctx.save_for_backward(a, b)
        return a / b

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        a, b = ctx.saved_tensors
        return unbroadcast(grad / b, a.shape), unbroadcast(-grad * a / (b * b), b.shape)


class Scale(Primitive):
    name: str = "scale"
    description: str = "Multiplication by a Python scalar constant."

    def forward(self, ctx: Context, x: np.ndarray, factor: float = 1.0, **params) -> np.ndarray:
        ctx.params["factor"] = factor
        return x * x.dtype.type(factor)

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * grad.dtype.type(ctx.params["factor"]),)


class Negate(Primitive):
    name: str = "negate"
    description: str = "Elementwise negation."

    def forward(self, ctx: Context, x: np.ndarray, **params) -> np.ndarray:
        return -x

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (-grad,)


class Sqrt(Primitive):
    name: str = "sqrt"
    description: str = "Elementwise square root."

    def forward(self, ctx: Context, x: np.ndarray, **params) -> np.ndarray:
        out = np.sqrt(x)
        ctx.save_for_backward(out)
        return out

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        (out,) = ctx.saved_tensors
        return (grad * out.dtype.type(0.5) / out,)


class Log(Primitive):
    name: str = "log"
    description: str = "Elementwise natural logarithm."

    def forward(self, ctx: Context, x: np.ndarray, **params) -> np.ndarray:
        ctx.save_for_backward(x)
        return np.log(x)

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        (x,) = ctx.saved_tensors
        return (grad / x,)


class Exp(Primitive):
    name: str = "exp"
    description: str = "Elementwise exponential."

    def forward(self, ctx: Context, x: np.ndarray, **params) -> np.ndarray:
        out = np.exp(x)
        ctx.save_for_backward(out)
        return out

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        (out,) = ctx.saved_tensors
        return (grad * out,)


class Abs(Primitive):
    name: str = "abs"
    description: str = "Elementwise absolute value; the subgradient at 0 is 0."

    def forward(self, ctx: Context, x: np.ndarray, **params) -> np.ndarray:
        ctx.save_for_backward(x)
        return np.abs(x)

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        (x,) = ctx.saved_tensors
        return (grad * np.sign(x),)


class Relu(Primitive):
    name: str = "relu"
    description: str = "Elementwise max(x, 0)."

    def forward(self, ctx: Context, x: np.ndarray, **params) -> np.ndarray:
        mask = x > 0
        ctx.save_for_backward(mask)
        return np.where(mask, x, x.dtype.type(0))

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        (mask,) = ctx.saved_tensors
        return (np.where(mask, grad, grad.dtype.type(0)),)
