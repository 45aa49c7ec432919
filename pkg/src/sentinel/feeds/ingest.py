"""Feed fetching and normalization with first-class fixture replay.

Fixture mode is the default in tests: fetch returns recorded bytes from
`<fixtures_dir>/<source_id>/<scenario>` so every pipeline runs with zero
network. Entries that fail signature or timestamp validation become
rejects, never records.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import urlsplit

import requests
import yaml

from ..model import (
    HintMismatch,
    IocRecord,
    SentinelError,
    SignatureType,
    UnparseableSignature,
    canonical_json,
    format_ts,
    parse_signature,
    parse_ts,
    utc_now,
)

logger = logging.getLogger(__name__)

SOURCE_IDS = ("abuse-url", "abuse-malware", "malware-bazaar", "alienvault-otx", "anomali")
DEFAULT_SCENARIO = "default"
RETRY_ATTEMPTS = 3
RETRY_CAP_SECONDS = 30.0


class FeedUnavailable(SentinelError):
    code = "FeedUnavailable"


class AuthRejected(SentinelError):
    code = "AuthRejected"


class MalformedPayload(SentinelError):
    code = "MalformedPayload"


@dataclass(frozen=True)
class FeedSource:
    """One OSINT feed: endpoint, optional auth reference, field mapping."""

    id: str
    endpoint: str
    mapping: dict
    auth_env: Optional[str] = None

    @property
    def api_key(self) -> Optional[str]:
        env = self.auth_env or f"SENTINEL_FEED_{self.id.upper().replace('-', '_')}_KEY"
        return os.environ.get(env)


@dataclass
class SyncReport:
    source: str
    fetched: int = 0
    normalized: int = 0
    rejected: int = 0
    inserted: int = 0
    updated: int = 0
    started: datetime = field(default_factory=utc_now)
    finished: Optional[datetime] = None

    def to_doc(self) -> dict:
        return {
            "source": self.source,
            "fetched": self.fetched,
            "normalized": self.normalized,
            "rejected": self.rejected,
            "inserted": self.inserted,
            "updated": self.updated,
            "started": format_ts(self.started),
            "finished": format_ts(self.finished) if self.finished else None,
        }


class FeedRegistry:
    """The configured sources; built-in mappings overridable from a config file."""

    def __init__(self, override_path: Optional[Path] = None, fixtures_dir: Optional[Path] = None):
        raw = yaml.safe_load(resources.files("sentinel.feeds").joinpath("sources.yaml").read_text("utf-8"))
        if override_path:
            overrides = yaml.safe_load(Path(override_path).read_text("utf-8")) or {}
            for source_id, fields in overrides.items():
                raw.setdefault(source_id, {}).update(fields)
        self.sources: dict[str, FeedSource] = {}
        for source_id, fields in raw.items():
            self.sources[source_id] = FeedSource(
                id=source_id,
                endpoint=fields.get("endpoint", ""),
                mapping=fields,
                auth_env=fields.get("auth_env"),
            )
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None

    def get(self, source_id: str) -> FeedSource:
        if source_id not in self.sources:
            raise FeedUnavailable(f"unknown feed source: {source_id}")
        return self.sources[source_id]

    def ids(self) -> list[str]:
        return sorted(self.sources)


# ---------------------------------------------------------------------------
# Fetch
# ---------------------------------------------------------------------------


def fetch(
    source: FeedSource,
    since: Optional[datetime] = None,
    fixtures_dir: Optional[Path] = None,
    scenario: str = DEFAULT_SCENARIO,
    sleeper: Callable[[float], None] = time.sleep,
    timeout: float = 30.0,
) -> str:
    """Raw response body; byte-for-byte fixture replay when a fixtures dir is set."""
    if fixtures_dir is not None:
        path = Path(fixtures_dir) / source.id / scenario
        if not path.exists():
            raise FeedUnavailable(f"no fixture for {source.id}/{scenario} under {fixtures_dir}")
        payload = path.read_bytes().decode("utf-8")
        if since is not None:
            payload = _filter_since(source, payload, since)
        return payload

    headers = {}
    if source.api_key:
        headers["X-OTX-API-KEY" if source.id == "alienvault-otx" else "Authorization"] = source.api_key
    params = {}
    if since is not None:
        params["modified_since"] = format_ts(since)
    delay = 1.0
    last_error: Optional[Exception] = None
    for attempt in range(RETRY_ATTEMPTS):
        try:
            resp = requests.get(source.endpoint, headers=headers, params=params, timeout=timeout)
            if resp.status_code in (401, 403):
                raise AuthRejected(f"{source.id} rejected credentials ({resp.status_code})")
            resp.raise_for_status()
            return resp.text
        except AuthRejected:
            raise
        except requests.RequestException as exc:
            last_error = exc
            if attempt + 1 < RETRY_ATTEMPTS:
                sleeper(min(delay, RETRY_CAP_SECONDS))
                delay *= 2
    raise FeedUnavailable(f"{source.id} unreachable after {RETRY_ATTEMPTS} attempts: {last_error}")


def _filter_since(source: FeedSource, payload: str, since: datetime) -> str:
    doc, entries_key, entries = _parse_entries(source, payload)
    kept = []
    for entry in entries:
        stamp = _entry_last(source.mapping, entry)
        if stamp is not None and stamp > since:
            kept.append(entry)
    doc[entries_key] = kept
    return json.dumps(doc)


# ---------------------------------------------------------------------------
# Normalize
# ---------------------------------------------------------------------------


def _parse_entries(source: FeedSource, payload: str) -> tuple[dict, str, list]:
    try:
        doc = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise MalformedPayload(f"{source.id} payload is not JSON: {exc}") from exc
    entries_key = source.mapping.get("entries", "")
    if not isinstance(doc, dict) or entries_key not in doc:
        raise MalformedPayload(f"{source.id} payload has no {entries_key!r} list")
    entries = doc[entries_key]
    if not isinstance(entries, list):
        raise MalformedPayload(f"{source.id} {entries_key!r} is not a list")
    return doc, entries_key, entries


def _entry_last(mapping: dict, entry: dict) -> Optional[datetime]:
    for field_name in mapping.get("last_fields", []):
        value = entry.get(field_name)
        if value:
            try:
                return parse_ts(str(value))
            except ValueError:
                continue
    return None


def normalize(source: FeedSource, payload: str) -> tuple[list[IocRecord], list[tuple[str, str]]]:
    """Map raw feed entries onto records; invalid entries land in rejects."""
    _, _, entries = _parse_entries(source, payload)
    mapping = source.mapping
    records: list[IocRecord] = []
    rejects: list[tuple[str, str]] = []
    for entry in entries:
        entry_text = canonical_json(entry)
        try:
            records.append(_normalize_entry(source, mapping, entry, entry_text))
        except SentinelError as exc:
            rejects.append((entry_text, exc.code))
        except (ValueError, KeyError, TypeError) as exc:
            rejects.append((entry_text, f"InvalidEntry: {exc}"))
    return records, rejects


def _normalize_entry(source: FeedSource, mapping: dict, entry: dict, entry_text: str) -> IocRecord:
    raw_value = entry.get(mapping["value_field"])
    if not raw_value:
        raise UnparseableSignature(f"entry has no {mapping['value_field']}")
    if "kind" in mapping:
        kind = SignatureType(mapping["kind"])
    else:
        marker = str(entry.get(mapping["kind_field"], ""))
        kind_map = mapping.get("kind_map", {})
        if marker not in kind_map:
            raise UnparseableSignature(f"unmapped entry type {marker!r}")
        kind = SignatureType(kind_map[marker])
    try:
        signature = parse_signature(str(raw_value), hint=kind)
    except HintMismatch as exc:
        # in feed context a value failing its declared kind is just unparseable
        raise UnparseableSignature(exc.message) from exc

    first_raw = entry.get(mapping.get("first_field", ""), None)
    if not first_raw:
        raise ValueError("entry has no first-reported timestamp")
    first = parse_ts(str(first_raw))
    last = _entry_last(mapping, entry) or first
    if last < first:
        last = first

    ports: tuple[int, ...] = ()
    if mapping.get("ports_from_url") and signature.kind is SignatureType.URL:
        port = urlsplit(signature.value).port
        if port is not None:
            ports = (port,)

    label = str(entry.get(mapping.get("label_field", ""), "") or "")
    return IocRecord.build(
        signature,
        source.id,
        first_reported=first,
        last_reported=last,
        threat_label=label,
        ports=ports,
        raw=entry_text,
    )


# ---------------------------------------------------------------------------
# Sync
# ---------------------------------------------------------------------------


def sync(
    source: FeedSource,
    store,
    since: Optional[datetime] = None,
    fixtures_dir: Optional[Path] = None,
    scenario: str = DEFAULT_SCENARIO,
    sleeper: Callable[[float], None] = time.sleep,
) -> SyncReport:
    """fetch -> normalize -> upsert, with a conservation-checked report."""
    report = SyncReport(source=source.id, started=utc_now())
    payload = fetch(source, since=since, fixtures_dir=fixtures_dir, scenario=scenario, sleeper=sleeper)
    _, _, entries = _parse_entries(source, payload)
    report.fetched = len(entries)
    records, rejects = normalize(source, payload)
    report.normalized = len(records)
    report.rejected = len(rejects)
    for entry_text, reason in rejects:
        logger.info("feed %s rejected entry (%s): %.120s", source.id, reason, entry_text)
    ingest = store.upsert_records(records)
    report.inserted = ingest.inserted
    report.updated = ingest.updated
    report.finished = utc_now()
    return report


class FeedScheduler:
    """Polls every source on an interval; one in-flight sync per source."""

    def __init__(
        self,
        registry: FeedRegistry,
        store,
        interval_seconds: float = 900.0,
        fixtures_dir: Optional[Path] = None,
    ):
        self.registry = registry
        self.store = store
        self.interval = interval_seconds
        self.fixtures_dir = fixtures_dir
        self._in_flight: dict[str, threading.Lock] = {s: threading.Lock() for s in registry.ids()}
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self.last_reports: dict[str, SyncReport] = {}

    def sync_source(self, source_id: str) -> Optional[SyncReport]:
        """Runs one sync unless the source already has one in flight (no-op then)."""
        lock = self._in_flight[source_id]
        if not lock.acquire(blocking=False):
            return None
        try:
            report = sync(self.registry.get(source_id), self.store, fixtures_dir=self.fixtures_dir)
            self.last_reports[source_id] = report
            return report
        finally:
            lock.release()

    def _loop(self) -> None:
        while not self._stop.wait(self.interval):
            for source_id in self.registry.ids():
                try:
                    self.sync_source(source_id)
                except SentinelError as exc:
                    logger.warning("scheduled sync of %s failed: %s", source_id, exc.message)

    def start(self) -> None:
        if self._thread is None:
            self._thread = threading.Thread(target=self._loop, name="feed-scheduler", daemon=True)
            self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread:
            self._thread.join(timeout=5)
            self._thread = None
