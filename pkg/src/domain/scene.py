from enum import Enum
from typing import Dict, List

from pydantic import BaseModel, ConfigDict, Field


class SegClass(int, Enum):
    BACKGROUND = 0
    RIM = 1
    CORE = 2
    ENHANCED = 3


# Nested evaluation regions (unions of class ids): core within enhanced within whole.
REGIONS: Dict[str, List[int]] = {
    "WholeT": [SegClass.RIM, SegClass.CORE, SegClass.ENHANCED],
    "EnhT": [SegClass.CORE, SegClass.ENHANCED],
    "CoreT": [SegClass.CORE],
}


class SceneParams(BaseModel):
    """Geometry and base appearance of synthetic nested-ellipse scenes."""
    model_config = ConfigDict(frozen=True)

    image_size: int = 64
    num_classes: int = 4
    # Semi-axes of the outer ellipse, as fractions of the image size.
    axis_range: tuple = (0.12, 0.28)
    enhanced_ratio: tuple = (0.55, 0.75)
    core_ratio: tuple = (0.35, 0.6)
    intensities: Dict[int, float] = Field(
        default_factory=lambda: {0: 0.1, 1: 0.45, 2: 0.3, 3: 0.85}
    )
    intensity_jitter: float = 0.05
    base_noise: float = 0.02
    empty_fraction: float = Field(0.0, ge=0.0, le=1.0)


class DomainShift(BaseModel):
    """Appearance (and optionally size) change applied on top of a rendered scene."""
    model_config = ConfigDict(frozen=True)

    gain: float = 1.0
    gamma: float = Field(1.0, gt=0)
    noise: float = Field(0.0, ge=0)
    invert: bool = False
    size_ratio: float = Field(1.0, gt=0)


PRESETS: Dict[str, DomainShift] = {
    "identity": DomainShift(),
    # cross-modality analogue
    "shift-appearance": DomainShift(gain=0.6, gamma=1.8, noise=0.05),
    # cross-subtype analogue: appearance change plus smaller foreground
    "shift-subtype": DomainShift(gain=0.9, gamma=1.2, noise=0.03, size_ratio=0.7),
    # second cross-modality analogue with inverted contrast
    "shift-inversion": DomainShift(noise=0.05, invert=True),
}

SPLITS = ("source-train", "source-val", "target-train", "target-test")
SOURCE_SPLITS = ("source-train", "source-val")

DEFAULT_COUNTS: Dict[str, int] = {
    "source-train": 400,
    "source-val": 100,
    "target-train": 400,
    "target-test": 100,
}
