"""Injectable time sources and RFC-3339 helpers.

Engine logs, leases and the simulator all take a clock so that tests and
simulations produce reproducible timestamps.
"""

from __future__ import annotations

import threading
from datetime import datetime, timedelta, timezone
from typing import Protocol


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class VirtualClock:
    """A manually advanced clock; thread-safe, starts at a fixed instant."""

    DEFAULT_START = datetime(2026, 1, 1, tzinfo=timezone.utc)

    def __init__(self, start: datetime | None = None) -> None:
        self._now = start or self.DEFAULT_START
        if self._now.tzinfo is None:
            self._now = self._now.replace(tzinfo=timezone.utc)
        self._lock = threading.Lock()

    def now(self) -> datetime:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> datetime:
        if seconds < 0:
            raise ValueError("clock cannot run backwards")
        with self._lock:
            self._now += timedelta(seconds=seconds)
            return self._now


def rfc3339(dt: datetime) -> str:
    """Seconds-precision RFC-3339 UTC string, always with a Z suffix."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).replace(microsecond=0).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_rfc3339(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
