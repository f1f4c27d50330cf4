from enum import Enum
from typing import Any, Dict
from pydantic import BaseModel, Field
from datetime import datetime
import uuid


class EventType(str, Enum):
    DATASET_GENERATED = "dataset_generated"
    PRETRAIN_EPOCH_COMPLETED = "pretrain_epoch_completed"
    PRETRAIN_COMPLETED = "pretrain_completed"
    ADAPT_STEP_COMPLETED = "adapt_step_completed"
    ADAPT_COMPLETED = "adapt_completed"
    CHECKPOINT_SAVED = "checkpoint_saved"
    EVALUATION_COMPLETED = "evaluation_completed"


class Event(BaseModel):
    id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    type: EventType
    payload: Dict[str, Any]
    source: str = "system"
    timestamp: datetime = Field(default_factory=datetime.now)
