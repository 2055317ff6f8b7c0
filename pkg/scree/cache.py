from __future__ import annotations

from collections import OrderedDict
from concurrent.futures import Future
from dataclasses import dataclass
import threading
from typing import Callable, Generic, Hashable, Protocol, TypeVar

K = TypeVar("K", bound=Hashable)
V = TypeVar("V")


@dataclass(frozen=True)
class CacheStats:
    capacity: int
    size: int
    hits: int
    misses: int

    @property
    def hit_ratio(self) -> float:
        lookups = self.hits + self.misses
        return self.hits / lookups if lookups else 0.0


class Cache(Protocol[K, V]):
    def get_or_compute(self, key: K, producer: Callable[[], V]) -> tuple[V, bool]: ...

    def stats(self) -> CacheStats: ...


class LruCache(Generic[K, V]):
    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError(f"cache capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.hits = 0
        self.misses = 0
        self._entries: OrderedDict[K, V] = OrderedDict()
        self._pending: dict[K, Future[V]] = {}
        self._lock = threading.Lock()

    def get(self, key: K) -> V | None:
        with self._lock:
            if key not in self._entries:
                return None
            self._entries.move_to_end(key)
            return self._entries[key]

    def put(self, key: K, value: V) -> None:
        with self._lock:
            self._store(key, value)

    def _store(self, key: K, value: V) -> None:
        self._entries[key] = value
        self._entries.move_to_end(key)
        while len(self._entries) > self.capacity:
            self._entries.popitem(last=False)

    def get_or_compute(self, key: K, producer: Callable[[], V]) -> tuple[V, bool]:
        """Return `(value, hit)`. A producer error propagates and nothing is stored."""
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)
                self.hits += 1
                return self._entries[key], True
            pending = self._pending.get(key)
            owner = pending is None
            if pending is None:
                pending = Future()
                self._pending[key] = pending
                self.misses += 1

        if not owner:
            value = pending.result()
            with self._lock:
                self.hits += 1
            return value, True

        try:
            value = producer()
        except BaseException as exc:
            with self._lock:
                del self._pending[key]
            pending.set_exception(exc)
            raise
        with self._lock:
            self._store(key, value)
            del self._pending[key]
        pending.set_result(value)
        return value, False

    def __contains__(self, key: object) -> bool:
        with self._lock:
            return key in self._entries

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def keys(self) -> list[K]:
        with self._lock:
            return list(self._entries)

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def stats(self) -> CacheStats:
        with self._lock:
            return CacheStats(self.capacity, len(self._entries), self.hits, self.misses)


class NoCache(Generic[K, V]):
    capacity = 0

    def __init__(self) -> None:
        self.misses = 0
        self._lock = threading.Lock()

    def get_or_compute(self, key: K, producer: Callable[[], V]) -> tuple[V, bool]:
        with self._lock:
            self.misses += 1
        return producer(), False

    def stats(self) -> CacheStats:
        with self._lock:
            return CacheStats(0, 0, 0, self.misses)


def cache_get_or_compute(cache: Cache[K, V], key: K, producer: Callable[[], V]) -> tuple[V, bool]:
    return cache.get_or_compute(key, producer)
