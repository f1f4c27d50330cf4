import logging
import os
from typing import Any, Dict, Literal, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.domain.errors import ConfigError
from src.domain.schedule import AdaptFlags, AdaptSchedule

logger = logging.getLogger(__name__)


class RunConfig(BaseModel):
    """
    Settings for one pipeline run, read from a plain-text key=value file.
    Unknown keys and out-of-range values are rejected before any computation.
    """
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, ge=0)
    epochs: int = Field(8, ge=0)
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(8, ge=2)
    eta0: float = Field(0.9, ge=0.0, le=1.0)
    tau: float = Field(1.0, gt=0)
    lambda_start: float = 10.0
    lambda_end: float = 0.0
    adapt_iters: int = Field(100, ge=0)
    adaptive_channels: bool = True
    use_se: bool = True
    freeze_non_bn: bool = False
    source_momentum: float = Field(0.1, ge=0.0, le=1.0)
    adapt_lr: float = Field(1e-3, gt=0)
    dtype: Literal["f64", "f32"] = "f64"
    num_classes: int = Field(4, ge=2)
    in_channels: int = Field(1, ge=1)
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None

    @classmethod
    def from_mapping(cls, values: Dict[str, Any]) -> "RunConfig":
        try:
            return cls(**values)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
            )
            raise ConfigError(f"Invalid run configuration: {problems}") from e

    @classmethod
    def from_file(cls, path: str, **overrides: Any) -> "RunConfig":
        """Parse `path` (key=value lines, # comments) and apply non-None overrides on top."""
        if not os.path.isfile(path):
            raise ConfigError(f"Config file not found: {path}")
        raw = dotenv_values(path, interpolate=False)
        values: Dict[str, Any] = {key: value for key, value in raw.items() if value is not None}
        values.update({key: value for key, value in overrides.items() if value is not None})
        config = cls.from_mapping(values)
        logger.info(f"⚙️ Loaded config {path} (seed={config.seed}, dtype={config.dtype})")
        return config

    def to_text(self) -> str:
        """Render back to key=value lines (None values omitted)."""
        lines = []
        for key, value in self.model_dump().items():
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def schedule(self) -> AdaptSchedule:
        return AdaptSchedule(
            eta0=self.eta0,
            tau=self.tau,
            lambda_start=self.lambda_start,
            lambda_end=self.lambda_end,
            total_iters=self.adapt_iters,
        )

    def flags(self) -> AdaptFlags:
        return AdaptFlags(
            adaptive_channels=self.adaptive_channels,
            use_se=self.use_se,
            freeze_non_bn=self.freeze_non_bn,
        )
