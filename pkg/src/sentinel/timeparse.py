"""Deterministic resolution of relative and explicit time phrases.

Dates are too consequential to leave to sampled model output, so this
closed phrase set {last N hours, last N days, today, yesterday} is resolved
here and takes precedence over model-proposed dates.
"""

from __future__ import annotations

import re
from datetime import datetime, timedelta
from typing import Optional

from .model import TimeWindow, parse_ts

_WORD_NUMBERS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
    "seven": 7, "eight": 8, "nine": 9, "ten": 10, "twelve": 12,
    "twenty-four": 24, "twenty four": 24,
}

_LAST_RE = re.compile(
    r"\b(?:last|past|previous|recent)\s+(?:(\d+)|([a-z-]+(?:\s[a-z]+)?))?\s*(hour|day|week)s?\b",
    re.IGNORECASE,
)
_TODAY_RE = re.compile(r"\btoday\b", re.IGNORECASE)
_YESTERDAY_RE = re.compile(r"\byesterday\b", re.IGNORECASE)

_DATE_RE = re.compile(
    r"\b(\d{4})[-/](\d{2})[-/](\d{2})(?:[T ](\d{2}):(\d{2})(?::(\d{2}))?Z?)?\b"
)
_FROM_WORDS = ("from", "since", "after", "starting")
_TO_WORDS = ("to", "until", "till", "before", "ending")


def _midnight(now: datetime) -> datetime:
    return now.replace(hour=0, minute=0, second=0, microsecond=0)


def parse_relative_window(text: str, now: datetime) -> Optional[TimeWindow]:
    """Resolve a relative time phrase against the injected clock, or None."""
    m = _LAST_RE.search(text)
    if m:
        digits, words, unit = m.groups()
        if digits:
            n = int(digits)
        elif words and words.lower() in _WORD_NUMBERS:
            n = _WORD_NUMBERS[words.lower()]
        elif words:
            return None  # "last reported day" and similar non-numbers
        else:
            n = 1
        unit = unit.lower()
        if unit == "hour":
            delta = timedelta(hours=n)
        elif unit == "day":
            delta = timedelta(days=n)
        else:
            delta = timedelta(weeks=n)
        return TimeWindow(from_date=now - delta, to_date=now)
    if _TODAY_RE.search(text):
        return TimeWindow(from_date=_midnight(now), to_date=now)
    if _YESTERDAY_RE.search(text):
        start = _midnight(now) - timedelta(days=1)
        return TimeWindow(from_date=start, to_date=_midnight(now))
    return None


def find_explicit_dates(text: str) -> list[tuple[datetime, Optional[str]]]:
    """Literal date mentions with a from/to role hint from the preceding word."""
    found = []
    for m in _DATE_RE.finditer(text):
        y, mo, d, hh, mm, ss = m.groups()
        stamp = f"{y}-{mo}-{d}"
        if hh is not None:
            stamp += f"T{hh}:{mm}:{ss or '00'}"
        try:
            dt = parse_ts(stamp)
        except ValueError:
            continue
        prefix = text[: m.start()].rstrip().lower()
        lead = prefix.split()[-1] if prefix.split() else ""
        role = None
        if lead in _FROM_WORDS:
            role = "from"
        elif lead in _TO_WORDS:
            role = "to"
        found.append((dt, role))
    return found


def explicit_window(text: str) -> Optional[TimeWindow]:
    """Build a window from literal dates in the text, honoring role hints."""
    mentions = find_explicit_dates(text)
    if not mentions:
        return None
    from_date = to_date = None
    unassigned = []
    for dt, role in mentions:
        if role == "from":
            from_date = dt
        elif role == "to":
            to_date = dt
        else:
            unassigned.append(dt)
    for dt in unassigned:
        if from_date is None:
            from_date = dt
        elif to_date is None:
            to_date = dt
    if from_date and to_date and from_date > to_date:
        from_date, to_date = to_date, from_date
    return TimeWindow(from_date=from_date, to_date=to_date)
