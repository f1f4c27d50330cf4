from typing import ClassVar, List

from pydantic import BaseModel, Field

from src.domain.errors import MomentumRangeError, ScheduleRangeError


class AdaptSchedule(BaseModel):
    """Iteration state of a target adaptation run plus its momentum and lambda schedules."""
    eta0: float = 0.9
    tau: float = 1.0
    lambda_start: float = 10.0
    lambda_end: float = 0.0
    total_iters: int = 100
    t: int = 0

    def model_post_init(self, __context) -> None:
        if not 0.0 <= self.eta0 <= 1.0:
            raise MomentumRangeError(f"eta0 must lie in [0, 1], got {self.eta0}")
        if self.tau <= 0:
            raise ScheduleRangeError(f"tau must be > 0, got {self.tau}")
        if self.total_iters < 0:
            raise ScheduleRangeError(f"total_iters must be >= 0, got {self.total_iters}")
        if not 0 <= self.t <= self.total_iters:
            raise ScheduleRangeError(f"t must lie in [0, {self.total_iters}], got {self.t}")

    @property
    def exhausted(self) -> bool:
        return self.t >= self.total_iters

    def momentum_now(self) -> float:
        from src.engine.layers.batchnorm import emd_momentum

        return emd_momentum(self.t, self.eta0, self.tau)


class AdaptFlags(BaseModel):
    """Objective switches. adaptive_channels=False is the OSUDA-AC ablation, use_se=False is OSUDA-SE."""
    adaptive_channels: bool = True
    use_se: bool = True
    freeze_non_bn: bool = False


class LayerDistance(BaseModel):
    layer: str
    mean_d: float
    max_d: float


class StepReport(BaseModel):
    t: int
    eta_t: float
    lambda_t: float
    loss_total: float
    loss_hbs: float
    loss_se: float
    weighted_se: float
    mean_d: float
    max_d: float
    mean_alpha: float
    min_alpha: float
    max_alpha: float
    layer_distances: List[LayerDistance] = Field(default_factory=list)
    class_fractions: List[float] = Field(default_factory=list)

    CSV_COLUMNS: ClassVar[List[str]] = [
        "t", "eta_t", "lambda_t", "loss_total", "loss_hbs", "loss_se", "mean_d", "max_d",
        "weighted_se", "mean_alpha", "min_alpha", "max_alpha",
    ]

    @classmethod
    def csv_header(cls, num_classes: int) -> str:
        columns = list(cls.CSV_COLUMNS)
        columns += [f"class_frac_{k}" for k in range(num_classes)]
        return ",".join(columns)

    def csv_row(self) -> str:
        values = [getattr(self, column) for column in self.CSV_COLUMNS] + list(self.class_fractions)
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in values)
