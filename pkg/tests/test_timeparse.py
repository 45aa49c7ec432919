"""Relative and explicit time phrase resolution with a fixed clock."""

from datetime import datetime, timezone

from sentinel.model import parse_ts
from sentinel.timeparse import explicit_window, parse_relative_window

NOW = datetime(2023, 1, 2, 0, 0, 0, tzinfo=timezone.utc)


def test_last_24_hours():
    w = parse_relative_window("Give the latest IP addresses reported in the last 24 hours.", NOW)
    assert w.from_date == parse_ts("2023-01-01T00:00:00Z")
    assert w.to_date == parse_ts("2023-01-02T00:00:00Z")


def test_last_7_days():
    w = parse_relative_window("Show the statistics of the latest IoCs in the last 7 days.", NOW)
    assert w.from_date == parse_ts("2022-12-26T00:00:00Z")
    assert w.to_date == NOW


def test_today():
    w = parse_relative_window("Block all IP addresses reported today.", NOW)
    assert w.from_date == parse_ts("2023-01-02T00:00:00Z")
    assert w.to_date == NOW


def test_yesterday():
    w = parse_relative_window("anything reported yesterday", NOW)
    assert w.from_date == parse_ts("2023-01-01T00:00:00Z")
    assert w.to_date == parse_ts("2023-01-02T00:00:00Z")


def test_last_day_singular():
    w = parse_relative_window("the IP addresses reported on the last day", NOW)
    assert w.from_date == parse_ts("2023-01-01T00:00:00Z")
    assert w.to_date == NOW


def test_word_number():
    w = parse_relative_window("in the past two hours", NOW)
    assert w.from_date == parse_ts("2023-01-01T22:00:00Z")


def test_no_phrase():
    assert parse_relative_window("Show the statistics", NOW) is None


def test_explicit_date_pair():
    w = explicit_window("between 2023/01/01 and 2023/01/02 please")
    assert w.from_date == parse_ts("2023-01-01T00:00:00Z")
    assert w.to_date == parse_ts("2023-01-02T00:00:00Z")


def test_explicit_role_words():
    w = explicit_window("reports until 2023-01-02 but from 2023-01-01")
    assert w.from_date == parse_ts("2023-01-01T00:00:00Z")
    assert w.to_date == parse_ts("2023-01-02T00:00:00Z")


def test_explicit_with_time():
    w = explicit_window("from 2023-01-01 14:30:00")
    assert w.from_date == parse_ts("2023-01-01T14:30:00Z")
    assert w.to_date is None


def test_explicit_none():
    assert explicit_window("no dates here") is None
