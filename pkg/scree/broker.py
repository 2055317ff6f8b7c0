from __future__ import annotations

from collections import deque
from dataclasses import dataclass
import logging
import threading
import time
from typing import Any, Generic, Protocol, TypeVar

from scree.models import ScreeError


DEFAULT_QUEUE_CAPACITY = 4096

logger = logging.getLogger(__name__)

T = TypeVar("T")


class QueueClosedError(ScreeError):
    pass


@dataclass(frozen=True)
class QueueStats:
    name: str
    capacity: int
    depth: int
    pushed: int
    popped: int
    closed: bool = False


class MessageQueue(Protocol[T]):
    name: str

    def push(self, msg: T, timeout: float | None = None) -> bool: ...

    def pop(self, timeout: float | None = None) -> T | None: ...

    def close(self) -> None: ...

    def stats(self) -> QueueStats: ...


class Queue(Generic[T]):
    def __init__(self, name: str, capacity: int = DEFAULT_QUEUE_CAPACITY) -> None:
        if capacity < 1:
            raise ValueError(f"queue capacity must be >= 1, got {capacity}")
        self.name = name
        self.capacity = capacity
        self._items: deque[T] = deque()
        self._condition = threading.Condition()
        self._pushed = 0
        self._popped = 0
        self._closed = False

    def push(self, msg: T, timeout: float | None = None) -> bool:
        if msg is None:
            raise ValueError("None cannot be queued")
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._condition:
            while len(self._items) >= self.capacity and not self._closed:
                if deadline is None:
                    self._condition.wait()
                    continue
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._condition.wait(remaining)
            if self._closed:
                raise QueueClosedError(f"queue '{self.name}' is closed")
            self._items.append(msg)
            self._pushed += 1
            self._condition.notify_all()
            return True

    def pop(self, timeout: float | None = None) -> T | None:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._condition:
            while not self._items:
                if self._closed:
                    raise QueueClosedError(f"queue '{self.name}' is closed")
                if deadline is None:
                    self._condition.wait()
                    continue
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._condition.wait(remaining)
            msg = self._items.popleft()
            self._popped += 1
            self._condition.notify_all()
            return msg

    def close(self) -> None:
        with self._condition:
            self._closed = True
            self._condition.notify_all()

    @property
    def closed(self) -> bool:
        with self._condition:
            return self._closed

    @property
    def depth(self) -> int:
        with self._condition:
            return len(self._items)

    def stats(self) -> QueueStats:
        with self._condition:
            return QueueStats(
                name=self.name,
                capacity=self.capacity,
                depth=len(self._items),
                pushed=self._pushed,
                popped=self._popped,
                closed=self._closed,
            )


class Subscription(Generic[T]):
    def __init__(self, channel: "Channel[T]", capacity: int) -> None:
        self._channel = channel
        self._buffer: Queue[T] = Queue(f"{channel.name}/sub", capacity)

    def receive(self, timeout: float | None = None) -> T | None:
        return self._buffer.pop(timeout)

    def unsubscribe(self) -> None:
        self._channel._remove(self)
        self._buffer.close()

    def _deliver(self, msg: T) -> None:
        self._buffer.push(msg)

    def stats(self) -> QueueStats:
        return self._buffer.stats()


class Channel(Generic[T]):
    def __init__(self, name: str, capacity: int = DEFAULT_QUEUE_CAPACITY) -> None:
        self.name = name
        self.capacity = capacity
        self._subscribers: list[Subscription[T]] = []
        self._lock = threading.Lock()
        # Serializes publishers so every subscriber sees one global order.
        self._publish_lock = threading.Lock()

    def subscribe(self, capacity: int | None = None) -> Subscription[T]:
        subscription: Subscription[T] = Subscription(self, capacity or self.capacity)
        with self._lock:
            self._subscribers.append(subscription)
        return subscription

    def publish(self, msg: T) -> int:
        with self._publish_lock:
            with self._lock:
                targets = list(self._subscribers)
            for subscription in targets:
                try:
                    subscription._deliver(msg)
                except QueueClosedError:
                    continue
            return len(targets)

    @property
    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._subscribers)

    def _remove(self, subscription: Subscription[T]) -> None:
        with self._lock:
            if subscription in self._subscribers:
                self._subscribers.remove(subscription)


class Broker:
    def __init__(
        self,
        default_capacity: int = DEFAULT_QUEUE_CAPACITY,
        capacities: dict[str, int] | None = None,
    ) -> None:
        self.default_capacity = default_capacity
        self.capacities = dict(capacities or {})
        self._queues: dict[str, Queue[Any]] = {}
        self._channels: dict[str, Channel[Any]] = {}
        self._lock = threading.Lock()

    def queue(self, name: str) -> Queue[Any]:
        with self._lock:
            existing = self._queues.get(name)
            if existing is None:
                capacity = self.capacities.get(name, self.default_capacity)
                existing = Queue(name, capacity)
                self._queues[name] = existing
                logger.debug("queue %s created (capacity %d)", name, capacity)
            return existing

    def channel(self, name: str) -> Channel[Any]:
        with self._lock:
            existing = self._channels.get(name)
            if existing is None:
                existing = Channel(name, self.capacities.get(name, self.default_capacity))
                self._channels[name] = existing
            return existing

    def stats(self) -> list[QueueStats]:
        with self._lock:
            queues = list(self._queues.values())
        return [queue.stats() for queue in queues]

    def is_drained(self) -> bool:
        return all(stats.depth == 0 for stats in self.stats())

    def close_all(self) -> None:
        with self._lock:
            queues = list(self._queues.values())
        for queue in queues:
            queue.close()
