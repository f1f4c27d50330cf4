import logging
from typing import Callable, Dict, List

from src.domain.event import Event, EventType

logger = logging.getLogger(__name__)

# Handlers run synchronously, in subscription order, on the publishing thread.
EventHandler = Callable[[Event], None]


class EventBus:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(EventBus, cls).__new__(cls)
            cls._instance.subscribers: Dict[EventType, List[EventHandler]] = {}
        return cls._instance

    def subscribe(self, event_type: EventType, handler: EventHandler):
        """Register a handler for a specific event type."""
        self.subscribers.setdefault(event_type, []).append(handler)
        logger.debug(f"Subscribed {getattr(handler, '__name__', handler)} to {event_type.value}")

    def unsubscribe(self, event_type: EventType, handler: EventHandler):
        handlers = self.subscribers.get(event_type, [])
        if handler in handlers:
            handlers.remove(handler)

    def clear(self):
        self.subscribers.clear()

    def publish(self, event: Event):
        """
        Deliver an event to every subscriber before returning, so per-step
        records are written in step order.
        A failing handler is logged and does not stop the others.
        """
        for handler in list(self.subscribers.get(event.type, [])):
            try:
                handler(event)
            except Exception as e:
                logger.error(f"Error handling event {event.type.value} in {getattr(handler, '__name__', handler)}: {e}", exc_info=True)


def publish(event_type: EventType, source: str, **payload) -> Event:
    event = Event(type=event_type, payload=payload, source=source)
    EventBus().publish(event)
    return event
