from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.domain.errors import ShapeMismatchError

from ..base_primitive import Context, Primitive


class Conv2d(Primitive):
    """
    2D convolution over (B, H, W, C_in) with kernels (k, k, C_in, C_out), zero "same" padding.

    The forward runs one matmul per sample on im2col patches, so a sample's output
    does not depend on what else is in the batch.
    """
    name: str = "conv2d"
    description: str = "Strided 2D convolution with same padding and bias."
    arity: int = 3

    def check_shapes(self, shapes: Sequence[Tuple[int, ...]], stride: int = 1, **params) -> None:
        super().check_shapes(shapes)
        x, w, b = (tuple(s) for s in shapes)
        if len(x) != 4 or len(w) != 4:
            raise ShapeMismatchError(self.name, shapes, "expected x (B,H,W,C) and w (k,k,C_in,C_out)")
        if w[0] != w[1] or w[0] % 2 == 0:
            raise ShapeMismatchError(self.name, shapes, "kernel must be square and odd-sized")
        if x[3] != w[2]:
            raise ShapeMismatchError(self.name, shapes, f"channel mismatch: input has {x[3]}, kernel expects {w[2]}")
        if b != (w[3],):
            raise ShapeMismatchError(self.name, shapes, "bias must have one entry per output channel")
        if stride < 1:
            raise ShapeMismatchError(self.name, shapes, f"stride must be >= 1, got {stride}")

    def forward(self, ctx: Context, x: np.ndarray, w: np.ndarray, b: np.ndarray,
                stride: int = 1, **params) -> np.ndarray:
        batch, height, width, c_in = x.shape
        k, _, _, c_out = w.shape
        pad = k // 2
        padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        windows = sliding_window_view(padded, (k, k), axis=(1, 2))[:, ::stride, ::stride]
        out_h, out_w = windows.shape[1], windows.shape[2]
        # (B, Ho, Wo, C_in, k, k) -> (B, Ho*Wo, k*k*C_in) in kernel layout order
        cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(batch, out_h * out_w, k * k * c_in)
        w_mat = w.reshape(k * k * c_in, c_out)
        out = np.matmul(cols, w_mat) + b

        ctx.save_for_backward(cols, w_mat)
        ctx.params.update(x_shape=x.shape, padded_shape=padded.shape, k=k, stride=stride, out_hw=(out_h, out_w))
        return out.reshape(batch, out_h, out_w, c_out)

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        cols, w_mat = ctx.saved_tensors
        batch, height, width, c_in = ctx.params["x_shape"]
        k, stride = ctx.params["k"], ctx.params["stride"]
        out_h, out_w = ctx.params["out_hw"]
        pad = k // 2
        c_out = w_mat.shape[1]

        g = grad.reshape(batch, out_h * out_w, c_out)
        grad_w = np.tensordot(cols, g, axes=([0, 1], [0, 1])).reshape(k, k, c_in, c_out)
        grad_b = g.sum(axis=(0, 1))

        grad_cols = np.matmul(g, w_mat.T).reshape(batch, out_h, out_w, k, k, c_in)
        grad_padded = np.zeros(ctx.params["padded_shape"], dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                grad_padded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride, :] += grad_cols[:, :, :, i, j, :]
        grad_x = grad_padded[:, pad:pad + height, pad:pad + width, :]
        return np.ascontiguousarray(grad_x), grad_w, grad_b


class Upsample2x(Primitive):
    name: str = "upsample2x"
    description: str = "Nearest-neighbour 2x spatial upsampling of (B, H, W, C)."

    def check_shapes(self, shapes: Sequence[Tuple[int, ...]], **params) -> None:
        super().check_shapes(shapes)
        if len(shapes[0]) != 4:
            raise ShapeMismatchError(self.name, shapes, "expected (B,H,W,C)")

    def forward(self, ctx: Context, x: np.ndarray, **params) -> np.ndarray:
        ctx.params["shape"] = x.shape
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        batch, height, width, channels = ctx.params["shape"]
        return (grad.reshape(batch, height, 2, width, 2, channels).sum(axis=(2, 4)),)


class SoftmaxChannels(Primitive):
    name: str = "softmax_channels"
    description: str = "Softmax over the last (class) axis."

    def forward(self, ctx: Context, x: np.ndarray, **params) -> np.ndarray:
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)
        ctx.save_for_backward(out)
        return out

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        (p,) = ctx.saved_tensors
        return (p * (grad - (grad * p).sum(axis=-1, keepdims=True)),)
