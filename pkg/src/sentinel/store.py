"""Embedded, time-indexed signature store.

Single-node: an append-only log of canonical record documents plus a
periodically compacted snapshot. Many readers, one writer at a time;
writes become visible atomically between queries.
"""

from __future__ import annotations

import ipaddress
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional

from .model import (
    IocRecord,
    SentinelError,
    Signature,
    SignatureType,
    TimeWindow,
    canonical_json,
)

logger = logging.getLogger(__name__)

DEFAULT_LIMIT = 100


class StorageFailure(SentinelError):
    code = "StorageFailure"


@dataclass(frozen=True)
class StoreFilter:
    """Conjunction of optional clauses; every present clause must match."""

    index_type: Optional[SignatureType] = None
    signature: Optional[Signature] = None
    window: TimeWindow = field(default_factory=TimeWindow)
    sources: Optional[tuple[str, ...]] = None
    limit: Optional[int] = None

    def __post_init__(self):
        if self.limit is not None and self.limit < 1:
            raise ValueError("limit must be >= 1")
        if self.signature is not None and self.index_type is not None:
            kind = self.signature.kind
            agrees = (
                kind == self.index_type
                or (kind is SignatureType.SUBNET and self.index_type is SignatureType.IP)
                or kind is SignatureType.PORT
            )
            if not agrees:
                raise ValueError(
                    f"signature kind {kind.value} conflicts with index_type {self.index_type.value}"
                )

    def to_doc(self) -> dict:
        doc: dict = {}
        if self.index_type:
            doc["index_type"] = self.index_type.value
        if self.signature:
            doc["signature"] = self.signature.to_doc()
        doc.update(self.window.to_doc())
        if self.sources is not None:
            doc["sources"] = sorted(self.sources)
        if self.limit is not None:
            doc["limit"] = self.limit
        return doc


@dataclass
class QueryResult:
    records: list[IocRecord]
    total_matched: int
    truncated: bool

    def to_doc(self) -> dict:
        return {
            "records": [r.to_doc() for r in self.records],
            "total_matched": self.total_matched,
            "truncated": self.truncated,
        }


@dataclass
class StoreStats:
    window: TimeWindow
    counts_by_kind: dict[SignatureType, int]
    counts_by_source: dict[str, int]
    total: int

    def to_doc(self) -> dict:
        return {
            "window": self.window.to_doc(),
            "counts_by_kind": {k.value: v for k, v in sorted(self.counts_by_kind.items())},
            "counts_by_source": dict(sorted(self.counts_by_source.items())),
            "total": self.total,
        }


@dataclass
class IngestReport:
    inserted: int = 0
    updated: int = 0


@dataclass
class StatusVerdict:
    found: bool
    records: list[IocRecord]


def signature_matches(record: IocRecord, wanted: Signature) -> bool:
    """Equality, subnet containment for IP records, or port-list membership."""
    if record.signature == wanted:
        return True
    if wanted.kind is SignatureType.SUBNET and record.signature.kind is SignatureType.IP:
        net = ipaddress.ip_network(wanted.value)
        addr = ipaddress.ip_address(record.signature.value)
        return addr.version == net.version and addr in net
    if wanted.kind is SignatureType.PORT:
        return int(wanted.value) in record.ports
    return False


def filter_matches(record: IocRecord, flt: StoreFilter) -> bool:
    if flt.index_type and record.signature.kind is not flt.index_type:
        return False
    if flt.signature and not signature_matches(record, flt.signature):
        return False
    if not flt.window.contains(record.last_reported):
        return False
    if flt.sources is not None and record.source not in flt.sources:
        return False
    return True


def sort_key(record: IocRecord) -> tuple:
    # last_reported descending, id ascending: a total order
    return (-record.last_reported.timestamp(), record.id)


class IocStore:
    """In-memory record map with optional durable append-log persistence."""

    def __init__(self, path: Optional[Path] = None):
        self._lock = threading.RLock()
        self._records: dict[str, IocRecord] = {}
        self._path = Path(path) if path else None
        self._log_handle = None
        if self._path:
            try:
                self._path.mkdir(parents=True, exist_ok=True)
                self._load()
                self._log_handle = open(self._log_path, "ab")
            except OSError as exc:
                raise StorageFailure(f"cannot open store at {self._path}: {exc}") from exc

    @property
    def _log_path(self) -> Path:
        return self._path / "iocs.log"

    @property
    def _snapshot_path(self) -> Path:
        return self._path / "iocs.snapshot"

    def _load(self) -> None:
        for source in (self._snapshot_path, self._log_path):
            if not source.exists():
                continue
            with open(source, "rb") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = IocRecord.from_doc(json.loads(line.decode("utf-8")))
                    self._records[rec.id] = rec
        logger.info("store loaded: %d records", len(self._records))

    # -- writes ------------------------------------------------------------

    def upsert_records(self, batch: Iterable[IocRecord]) -> IngestReport:
        """Insert new records, merge re-reports of known ids; never duplicates."""
        report = IngestReport()
        with self._lock:
            committed: list[IocRecord] = []
            for rec in batch:
                existing = self._records.get(rec.id)
                if existing is None:
                    merged = rec
                    report.inserted += 1
                else:
                    merged = _merge_records(existing, rec)
                    report.updated += 1
                self._records[rec.id] = merged
                committed.append(merged)
            if committed:
                self._append_log(committed)
        return report

    def _append_log(self, records: list[IocRecord]) -> None:
        if not self._log_handle:
            return
        try:
            for rec in records:
                self._log_handle.write(canonical_json(rec.to_doc()).encode("utf-8") + b"\n")
            self._log_handle.flush()
            os.fsync(self._log_handle.fileno())
        except OSError as exc:
            raise StorageFailure(f"append failed: {exc}") from exc

    def compact(self) -> None:
        """Write a fresh snapshot and truncate the log."""
        if not self._path:
            return
        with self._lock:
            tmp = self._snapshot_path.with_suffix(".tmp")
            with open(tmp, "wb") as fh:
                for line in self.export_lines():
                    fh.write(line.encode("utf-8") + b"\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self._snapshot_path)
            if self._log_handle:
                self._log_handle.close()
            self._log_handle = open(self._log_path, "wb")

    def close(self) -> None:
        with self._lock:
            if self._log_handle:
                self._log_handle.close()
                self._log_handle = None

    # -- reads -------------------------------------------------------------

    def _snapshot(self) -> list[IocRecord]:
        with self._lock:
            return list(self._records.values())

    def query(self, flt: StoreFilter) -> QueryResult:
        matched = [r for r in self._snapshot() if filter_matches(r, flt)]
        matched.sort(key=sort_key)
        limit = flt.limit if flt.limit is not None else DEFAULT_LIMIT
        shown = matched[:limit]
        return QueryResult(records=shown, total_matched=len(matched), truncated=len(matched) > len(shown))

    def count(self, flt: StoreFilter) -> int:
        return sum(1 for r in self._snapshot() if filter_matches(r, flt))

    def lookup_status(self, signature: Signature) -> StatusVerdict:
        """Exact match, with IP lookups also hitting covering subnet records."""
        hits = []
        for rec in self._snapshot():
            if rec.signature == signature:
                hits.append(rec)
            elif signature.kind is SignatureType.IP and rec.signature.kind is SignatureType.SUBNET:
                net = ipaddress.ip_network(rec.signature.value)
                addr = ipaddress.ip_address(signature.value)
                if addr.version == net.version and addr in net:
                    hits.append(rec)
        hits.sort(key=sort_key)
        return StatusVerdict(found=bool(hits), records=hits)

    def stats(self, window: TimeWindow) -> StoreStats:
        by_kind: dict[SignatureType, int] = {}
        by_source: dict[str, int] = {}
        total = 0
        for rec in self._snapshot():
            if not window.contains(rec.last_reported):
                continue
            by_kind[rec.signature.kind] = by_kind.get(rec.signature.kind, 0) + 1
            by_source[rec.source] = by_source.get(rec.source, 0) + 1
            total += 1
        return StoreStats(window=window, counts_by_kind=by_kind, counts_by_source=by_source, total=total)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    # -- export / import ---------------------------------------------------

    def export_lines(self) -> list[str]:
        records = sorted(self._snapshot(), key=lambda r: r.id)
        return [canonical_json(r.to_doc()) for r in records]

    def import_lines(self, lines: Iterable[str]) -> IngestReport:
        records = [IocRecord.from_doc(json.loads(line)) for line in lines if line.strip()]
        return self.upsert_records(records)


def _merge_records(old: IocRecord, new: IocRecord) -> IocRecord:
    """Re-report merge: newest report wins the mutable fields, times widen."""
    newer = new if new.last_reported >= old.last_reported else old
    return IocRecord(
        id=old.id,
        signature=old.signature,
        source=old.source,
        first_reported=min(old.first_reported, new.first_reported),
        last_reported=max(old.last_reported, new.last_reported),
        threat_label=newer.threat_label,
        ports=newer.ports,
        raw=newer.raw,
    )


def filter_from_params(
    kind: Optional[str] = None,
    value: Optional[str] = None,
    from_date: Optional[datetime] = None,
    to_date: Optional[datetime] = None,
    sources: Optional[Iterable[str]] = None,
    limit: Optional[int] = None,
) -> StoreFilter:
    """Build a StoreFilter from loosely-typed parameters (CLI flags, query strings)."""
    from .model import parse_signature

    index_type = SignatureType(kind) if kind else None
    signature = None
    if value is not None:
        signature = parse_signature(value, hint=index_type)
        if index_type is signature.kind:
            index_type = None
    return StoreFilter(
        index_type=index_type,
        signature=signature,
        window=TimeWindow(from_date, to_date),
        sources=tuple(sources) if sources is not None else None,
        limit=limit,
    )
