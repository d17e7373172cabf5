"""Millisecond clocks: wall time for live runs, a logical clock for scripted ones."""

from __future__ import annotations

import threading
import time
from typing import Protocol


class Clock(Protocol):
    def now(self) -> int: ...


class WallClock:
    def now(self) -> int:
        return time.time_ns() // 1_000_000


class SimClock:
    """Logical clock advanced explicitly by a harness; never moves backwards."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            return self._now

    def advance_to(self, now_ms: int) -> int:
        with self._lock:
            if now_ms > self._now:
                self._now = now_ms
            return self._now

    def advance(self, delta_ms: int) -> int:
        with self._lock:
            self._now += delta_ms
            return self._now
