from typing import List

import numpy as np

from src.engine.core.tensor import Tensor

from .functional import conv2d


class Conv2d:
    """Convolution parameters with seeded uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)]."""

    def __init__(self, name: str, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, dtype=np.float64):
        self.name = name
        self.stride = stride
        fan_in = kernel_size * kernel_size * in_channels
        bound = np.sqrt(1.0 / fan_in)
        weight = rng.uniform(-bound, bound, size=(kernel_size, kernel_size, in_channels, out_channels))
        bias = rng.uniform(-bound, bound, size=(out_channels,))
        self.weight = Tensor(weight.astype(dtype), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(bias.astype(dtype), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride)

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]
