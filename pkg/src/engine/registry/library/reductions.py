from typing import Optional, Tuple

import numpy as np

from ..base_primitive import Context, Primitive


class SumAll(Primitive):
    name: str = "sum_all"
    description: str = "Sum of every element, returned as a scalar tensor."

    def forward(self, ctx: Context, x: np.ndarray, **params) -> np.ndarray:
        ctx.params["shape"] = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (np.broadcast_to(grad, ctx.params["shape"]).copy(),)


class MeanAll(Primitive):
    name: str = "mean_all"
    description: str = "Mean of every element, returned as a scalar tensor."

    def forward(self, ctx: Context, x: np.ndarray, **params) -> np.ndarray:
        ctx.params["shape"] = x.shape
        return np.asarray(x.mean(), dtype=x.dtype)

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        shape = ctx.params["shape"]
        count = int(np.prod(shape))
        return (np.broadcast_to(grad / grad.dtype.type(count), shape).copy(),)


class ChannelMean(Primitive):
    """Per-channel mean over every leading axis (B, H, W for feature maps)."""
    name: str = "channel_mean"
    description: str = "Mean over all axes but the last."

    def forward(self, ctx: Context, x: np.ndarray, **params) -> np.ndarray:
        ctx.params["shape"] = x.shape
        return x.reshape(-1, x.shape[-1]).mean(axis=0)

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        shape = ctx.params["shape"]
        count = int(np.prod(shape[:-1]))
        return (np.broadcast_to(grad / grad.dtype.type(count), shape).copy(),)


class ChannelVar(Primitive):
    """Per-channel population variance (divisor N = product of leading extents)."""
    name: str = "channel_var"
    description: str = "Population variance over all axes but the last."

    def forward(self, ctx: Context, x: np.ndarray, **params) -> np.ndarray:
        flat = x.reshape(-1, x.shape[-1])
        centered = flat - flat.mean(axis=0)
        ctx.save_for_backward(centered)
        ctx.params["shape"] = x.shape
        return (centered * centered).mean(axis=0)

    def backward(self, ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        (centered,) = ctx.saved_tensors
        count = centered.shape[0]
        grad_flat = centered * (grad * grad.dtype.type(2.0 / count))
        return (grad_flat.reshape(ctx.params["shape"]),)
