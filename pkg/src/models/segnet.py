"""
toy-unet-v1: a three-level encoder-decoder with BN after every 3x3 convolution
and additive skips.

    enc1  conv3x3(C_in->8)            + BN + ReLU     H x W
    enc2  conv3x3(8->16, stride 2)    + BN + ReLU     H/2
    enc3  conv3x3(16->32, stride 2)   + BN + ReLU     H/4
    dec1  up2x, conv3x3(32->16)       + BN + ReLU, + enc2
    dec2  up2x, conv3x3(16->8)        + BN + ReLU, + enc1
    head  conv1x1(8->K), softmax over classes
"""
import logging
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.domain.errors import CheckpointFormatError, SpatialSizeError
from src.engine.core.tensor import Tensor, no_grad
from src.engine.layers.batchnorm import DEFAULT_EPS, BatchNorm2d, BNMode, restore_source
from src.engine.layers.conv import Conv2d
from src.engine.layers.functional import relu, softmax_channels, upsample2x

logger = logging.getLogger(__name__)

SPEC_ID = "toy-unet-v1"
WIDTHS = (8, 16, 32)


class NetworkSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    spec_id: str = SPEC_ID
    in_channels: int = Field(1, ge=1)
    num_classes: int = Field(4, ge=2)
    image_size: int = Field(64, ge=4)
    eps: float = Field(DEFAULT_EPS, gt=0)

    def conv_shapes(self) -> List[Tuple[str, int, int, int, int]]:
        """(name, kernel, C_in, C_out, stride) for every convolution, in forward order."""
        w1, w2, w3 = WIDTHS
        return [
            ("enc1", 3, self.in_channels, w1, 1),
            ("enc2", 3, w1, w2, 2),
            ("enc3", 3, w2, w3, 2),
            ("dec1", 3, w3, w2, 1),
            ("dec2", 3, w2, w1, 1),
            ("head", 1, w1, self.num_classes, 1),
        ]

    def bn_widths(self) -> List[Tuple[str, int]]:
        w1, w2, w3 = WIDTHS
        return [("bn1", w1), ("bn2", w2), ("bn3", w3), ("bn4", w2), ("bn5", w1)]

    def parameter_count(self) -> int:
        conv = sum(k * k * c_in * c_out + c_out for _, k, c_in, c_out, _ in self.conv_shapes())
        bn = sum(2 * c for _, c in self.bn_widths())
        return conv + bn

    def bn_channel_count(self) -> int:
        return sum(c for _, c in self.bn_widths())


class ToyUNet:
    def __init__(self, spec: NetworkSpec, rng: np.random.Generator, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.convs: Dict[str, Conv2d] = {
            name: Conv2d(name, c_in, c_out, k, rng, stride=stride, dtype=self.dtype)
            for name, k, c_in, c_out, stride in spec.conv_shapes()
        }
        self.bns: Dict[str, BatchNorm2d] = {
            name: BatchNorm2d(name, width, eps=spec.eps, dtype=self.dtype)
            for name, width in spec.bn_widths()
        }
        # Iteration counters: source pre-training steps and target adaptation steps.
        self.iterations_source = 0
        self.iterations_target = 0

    # ---------- Parameters ----------

    def bn_layers(self) -> List[BatchNorm2d]:
        return list(self.bns.values())

    def bn_parameters(self) -> List[Tensor]:
        return [p for bn in self.bn_layers() for p in bn.parameters()]

    def conv_parameters(self) -> List[Tensor]:
        return [p for conv in self.convs.values() for p in conv.parameters()]

    def parameters(self) -> List[Tensor]:
        return self.conv_parameters() + self.bn_parameters()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze_source(self) -> None:
        for bn in self.bn_layers():
            bn.freeze_source()

    @property
    def frozen(self) -> bool:
        return all(bn.stats.frozen for bn in self.bn_layers())

    # ---------- Forward ----------

    def _block(self, conv: str, bn: str, x: Tensor, mode: BNMode) -> Tensor:
        return relu(self.bns[bn](self.convs[conv](x), mode))

    def forward(self, x: Tensor, mode: BNMode) -> Tensor:
        """Class probabilities (B, H, W, K) for images (B, H, W, C_in)."""
        size = self.spec.image_size
        if x.ndim != 4 or x.shape[1:3] != (size, size):
            raise SpatialSizeError(f"{self.spec.spec_id} expects (B, {size}, {size}, C) input, got {x.shape}")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))

        e1 = self._block("enc1", "bn1", x, mode)
        e2 = self._block("enc2", "bn2", e1, mode)
        e3 = self._block("enc3", "bn3", e2, mode)
        d1 = self._block("dec1", "bn4", upsample2x(e3), mode) + e2
        d2 = self._block("dec2", "bn5", upsample2x(d1), mode) + e1
        return softmax_channels(self.convs["head"](d2))

    __call__ = forward

    def predict_labels(self, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
        """Eval-mode argmax labels (N, H, W) for images (N, H, W, C_in)."""
        labels = []
        with no_grad():
            for start in range(0, images.shape[0], batch_size):
                probs = self.forward(Tensor(images[start:start + batch_size]), BNMode.eval())
                labels.append(np.argmax(probs.numpy(), axis=-1).astype(np.uint8))
        return np.concatenate(labels, axis=0) if labels else np.zeros((0,) + images.shape[1:3], dtype=np.uint8)

    # ---------- State ----------

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Named arrays covering every parameter and BN statistic, in a fixed order."""
        state: Dict[str, np.ndarray] = {}
        for name, conv in self.convs.items():
            state[f"{name}.weight"] = conv.weight.data
            state[f"{name}.bias"] = conv.bias.data
        for name, bn in self.bns.items():
            stats = bn.stats
            state[f"{name}.running_mean"] = stats.running_mean
            state[f"{name}.running_var"] = stats.running_var
            state[f"{name}.gamma"] = stats.gamma.data
            state[f"{name}.beta"] = stats.beta.data
            if stats.frozen:
                state[f"{name}.source_mean"] = stats.source_mean
                state[f"{name}.source_var"] = stats.source_var
                state[f"{name}.source_gamma"] = stats.source_gamma
                state[f"{name}.source_beta"] = stats.source_beta
            state[f"{name}.eps"] = np.array([stats.eps], dtype=np.float64)
        return state

    def load_state_arrays(self, state: Dict[str, np.ndarray]) -> None:
        def take(key: str) -> np.ndarray:
            if key not in state:
                raise CheckpointFormatError(f"checkpoint is missing entry '{key}'")
            return np.array(state[key], dtype=self.dtype, copy=True)

        for name, conv in self.convs.items():
            conv.weight.data = take(f"{name}.weight")
            conv.bias.data = take(f"{name}.bias")
        for name, bn in self.bns.items():
            stats = bn.stats
            stats.running_mean = take(f"{name}.running_mean")
            stats.running_var = take(f"{name}.running_var")
            stats.gamma.data = take(f"{name}.gamma")
            stats.beta.data = take(f"{name}.beta")
            if f"{name}.eps" in state:
                stats.eps = float(np.asarray(state[f"{name}.eps"]).reshape(-1)[0])
            if f"{name}.source_mean" in state:
                restore_source(
                    stats,
                    take(f"{name}.source_mean"),
                    take(f"{name}.source_var"),
                    take(f"{name}.source_gamma"),
                    take(f"{name}.source_beta"),
                )
