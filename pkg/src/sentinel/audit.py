"""Append-only audit log; every pipeline stage of every session lands here.

One canonical JSON document per line, fsynced per append so a crash between
turns never loses a committed entry.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional

from .model import canonical_json, format_ts, parse_ts, utc_now

logger = logging.getLogger(__name__)

AUDIT_KINDS = (
    "user_msg",
    "llm_request",
    "llm_response",
    "plan",
    "clarification",
    "confirmation",
    "command",
    "report",
)


@dataclass
class AuditEntry:
    seq: int
    session_seq: int
    timestamp: datetime
    session_id: str
    kind: str
    payload: dict

    def to_doc(self) -> dict:
        return {
            "seq": self.seq,
            "session_seq": self.session_seq,
            "timestamp": format_ts(self.timestamp),
            "session_id": self.session_id,
            "kind": self.kind,
            "payload": self.payload,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "AuditEntry":
        return cls(
            seq=doc["seq"],
            session_seq=doc["session_seq"],
            timestamp=parse_ts(doc["timestamp"]),
            session_id=doc["session_id"],
            kind=doc["kind"],
            payload=doc.get("payload", {}),
        )


class AuditLog:
    def __init__(self, path: Path, redactor: Optional[callable] = None):
        self._path = Path(path)
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._redactor = redactor  # payload -> payload, applied before write
        self._seq = 0
        self._session_seq: dict[str, int] = {}
        for entry in self.entries():
            self._seq = max(self._seq, entry.seq)
            self._session_seq[entry.session_id] = max(
                self._session_seq.get(entry.session_id, 0), entry.session_seq
            )
        self._handle = open(self._path, "ab")

    def append(self, session_id: str, kind: str, payload: dict) -> AuditEntry:
        if kind not in AUDIT_KINDS:
            raise ValueError(f"unknown audit kind: {kind}")
        if self._redactor is not None:
            payload = self._redactor(payload)
        with self._lock:
            self._seq += 1
            self._session_seq[session_id] = self._session_seq.get(session_id, 0) + 1
            entry = AuditEntry(
                seq=self._seq,
                session_seq=self._session_seq[session_id],
                timestamp=utc_now(),
                session_id=session_id,
                kind=kind,
                payload=payload,
            )
            self._handle.write(canonical_json(entry.to_doc()).encode("utf-8") + b"\n")
            self._handle.flush()
            os.fsync(self._handle.fileno())
        return entry

    def entries(self, session_id: Optional[str] = None) -> list[AuditEntry]:
        if not self._path.exists():
            return []
        out = []
        with open(self._path, "rb") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = AuditEntry.from_doc(json.loads(line.decode("utf-8")))
                except (json.JSONDecodeError, KeyError):
                    # a torn final line from a crash mid-write is tolerated
                    logger.warning("skipping torn audit line")
                    continue
                if session_id is None or entry.session_id == session_id:
                    out.append(entry)
        return out

    def close(self) -> None:
        with self._lock:
            self._handle.close()
