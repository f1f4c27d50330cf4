import json
import logging
import os
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel

from src.domain.event import Event, EventType
from src.infrastructure.event_bus import EventBus

logger = logging.getLogger(__name__)

EVENTS_FILE = "events.jsonl"


def _jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


class RunEventLogger:
    """
    Subscribes to every run event and appends it to a JSONL file in the run directory.
    """
    def __init__(self, log_dir: str, bus: Optional[EventBus] = None):
        self.log_dir = log_dir
        os.makedirs(log_dir, exist_ok=True)
        self.log_file = os.path.join(log_dir, EVENTS_FILE)
        self.bus = bus or EventBus()
        self.events_written = 0
        for event_type in EventType:
            self.bus.subscribe(event_type, self.log_event)
        logger.info(f"📝 Run events go to {self.log_file}")

    def close(self) -> None:
        for event_type in EventType:
            self.bus.unsubscribe(event_type, self.log_event)

    def log_event(self, event: Event) -> None:
        record = event.model_dump(exclude={"payload"})
        record["type"] = event.type.value
        record["timestamp"] = event.timestamp.isoformat()
        record["payload"] = event.payload
        with open(self.log_file, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, default=_jsonable) + "\n")
        self.events_written += 1
