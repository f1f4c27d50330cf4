import logging
import os

from src.domain.event import Event, EventType
from src.domain.schedule import StepReport
from src.infrastructure.event_bus import EventBus

logger = logging.getLogger(__name__)


class MetricsLogWriter:
    """
    Subscribes to adaptation step events and appends one CSV row per step.
    The header is written when the writer is opened.
    """
    def __init__(self, path: str, num_classes: int):
        self.path = path
        self.num_classes = num_classes
        self.rows_written = 0
        self.bus = EventBus()
        self._file = None

    def open(self) -> "MetricsLogWriter":
        directory = os.path.dirname(self.path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self._file = open(self.path, "w", encoding="utf-8", newline="")
        self._file.write(StepReport.csv_header(self.num_classes) + "\n")
        self.bus.subscribe(EventType.ADAPT_STEP_COMPLETED, self.log_step)
        logger.info(f"📝 Writing adaptation log to {self.path}")
        return self

    def close(self) -> None:
        self.bus.unsubscribe(EventType.ADAPT_STEP_COMPLETED, self.log_step)
        if self._file is not None:
            self._file.close()
            self._file = None

    def __enter__(self) -> "MetricsLogWriter":
        return self.open()

    def __exit__(self, *exc) -> None:
        self.close()

    def log_step(self, event: Event) -> None:
        report = event.payload.get("report")
        if not isinstance(report, StepReport) or self._file is None:
            return
        self._file.write(report.csv_row() + "\n")
        self._file.flush()
        self.rows_written += 1
