"""Injectable time sources so every pipeline stage is reproducible."""

from __future__ import annotations

from datetime import datetime
from typing import Protocol

from .model import parse_ts, utc_now


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    def now(self) -> datetime:
        return utc_now()


class FixedClock:
    """Always reports the same instant; for tests and replayable demos."""

    def __init__(self, at: datetime | str):
        self._at = parse_ts(at) if isinstance(at, str) else at

    def now(self) -> datetime:
        return self._at
