"""Injectable unix-seconds clocks."""

from __future__ import annotations

import threading
import time
from typing import Protocol


class Clock(Protocol):
    def now(self) -> int: ...


class SystemClock:
    def now(self) -> int:
        return int(time.time())


class FakeClock:
    """Manually advanced clock with one-second granularity. Never goes backwards."""

    def __init__(self, start: int = 1_753_574_400):
        self._now = int(start)
        self._lock = threading.Lock()

    def now(self) -> int:
        return self._now

    def advance(self, seconds: int) -> int:
        if seconds < 0:
            raise ValueError("clock cannot move backwards")
        with self._lock:
            self._now += int(seconds)
            return self._now

    def set(self, when: int) -> None:
        with self._lock:
            if when < self._now:
                raise ValueError("clock cannot move backwards")
            self._now = int(when)
