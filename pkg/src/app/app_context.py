from typing import Optional

from src.domain.config import RunConfig
from src.infrastructure.event_bus import EventBus
from src.infrastructure.observability.run_event_logger import RunEventLogger


class AppContext:
    """Process-wide run state: the run config, the event bus and, when a run directory is known, its event log."""

    def __init__(self, config: RunConfig, run_dir: Optional[str] = None):
        self.config = config
        self.event_bus = EventBus()
        run_dir = config.out_dir or run_dir
        self.event_log = RunEventLogger(run_dir, bus=self.event_bus) if run_dir else None

    def close(self) -> None:
        if self.event_log is not None:
            self.event_log.close()
            self.event_log = None


_app_context: Optional[AppContext] = None


def set_app_context(ctx: AppContext) -> None:
    global _app_context
    if _app_context is not None and _app_context is not ctx:
        _app_context.close()
    _app_context = ctx


def get_app_context() -> AppContext:
    if _app_context is None:
        raise RuntimeError("AppContext not initialized")
    return _app_context
