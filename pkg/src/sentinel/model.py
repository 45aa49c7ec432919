"""Shared domain vocabulary: signatures, IoC records, slots, plans, and agent turns.

Every other module imports its types from here. All values are immutable
(or treated as such) and carry a canonical key-sorted JSON serialization
used by fixtures, the audit log, and self-consistency voting.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Any, Optional
from urllib.parse import urlsplit, urlunsplit

UTC = timezone.utc


class SentinelError(Exception):
    """Base class for all domain errors; `code` is the machine-readable name."""

    code = "SentinelError"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


class UnparseableSignature(SentinelError):
    code = "UnparseableSignature"


class HintMismatch(SentinelError):
    code = "HintMismatch"


# ---------------------------------------------------------------------------
# Timestamps (second precision, always UTC)
# ---------------------------------------------------------------------------

_TS_FORMATS = (
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d",
)


def utc_now() -> datetime:
    return datetime.now(tz=UTC).replace(microsecond=0)


def format_ts(dt: datetime) -> str:
    """Canonical timestamp text: `YYYY-MM-DDTHH:MM:SSZ`."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=UTC)
    return dt.astimezone(UTC).replace(microsecond=0).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_ts(text: str) -> datetime:
    """Parse a timestamp in any accepted textual form into aware UTC."""
    raw = text.strip()
    if not raw:
        raise ValueError("empty timestamp")
    cleaned = raw.replace(" UTC", "")
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1]
    try:
        dt = datetime.fromisoformat(cleaned)
    except ValueError:
        dt = None
        for fmt in _TS_FORMATS:
            try:
                dt = datetime.strptime(cleaned, fmt)
                break
            except ValueError:
                continue
        if dt is None:
            # epoch seconds, as some feeds report
            try:
                return datetime.fromtimestamp(float(cleaned), tz=UTC).replace(microsecond=0)
            except (ValueError, OSError) as exc:
                raise ValueError(f"unrecognized timestamp: {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=UTC)
    return dt.astimezone(UTC).replace(microsecond=0)


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------


def canonical_json(doc: Any) -> str:
    """Key-sorted compact JSON; the one textual form used everywhere."""
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------


class SignatureType(str, Enum):
    IP = "ip"
    SUBNET = "subnet"
    EMAIL = "email"
    HASH = "hash"
    URL = "url"
    PORT = "port"


@dataclass(frozen=True)
class Signature:
    """A normalized indicator value tagged with its kind."""

    kind: SignatureType
    value: str

    def to_doc(self) -> dict:
        return {"kind": self.kind.value, "value": self.value}

    @classmethod
    def from_doc(cls, doc: dict) -> "Signature":
        return cls(SignatureType(doc["kind"]), doc["value"])


_HASH_RE = re.compile(r"^[0-9a-fA-F]+$")
_PORT_RE = re.compile(r"^(0|[1-9][0-9]*)$")
_HASH_LENGTHS = (32, 40, 64)  # MD5, SHA-1, SHA-256


def _norm_ip(raw: str) -> str:
    addr = ipaddress.ip_address(raw)
    return str(addr).lower()


def _norm_subnet(raw: str) -> str:
    if "/" not in raw:
        raise ValueError("subnet requires CIDR notation")
    net = ipaddress.ip_network(raw, strict=False)  # host bits zeroed
    return str(net).lower()


def _norm_port(raw: str) -> str:
    if not _PORT_RE.match(raw):
        raise ValueError("port must be a decimal integer without leading zeros")
    port = int(raw)
    if port > 65535:
        raise ValueError("port out of range")
    return str(port)


def _norm_hash(raw: str) -> str:
    if len(raw) not in _HASH_LENGTHS or not _HASH_RE.match(raw):
        raise ValueError("hash must be 32/40/64 hex chars")
    return raw.lower()


def _norm_email(raw: str) -> str:
    if raw.count("@") != 1:
        raise ValueError("email requires exactly one @")
    local, domain = raw.split("@")
    if not local or not domain:
        raise ValueError("email local and domain parts must be nonempty")
    if any(c in raw for c in " \t/:"):
        raise ValueError("email contains forbidden characters")
    return raw.lower()


def _norm_url(raw: str) -> str:
    if any(c.isspace() for c in raw):
        raise ValueError("url contains whitespace")
    candidate = raw if "://" in raw else f"http://{raw}"
    parts = urlsplit(candidate)
    if not parts.scheme or not parts.netloc:
        raise ValueError("url requires scheme and host")
    host = parts.hostname or ""
    if "." not in host and host != "localhost":
        raise ValueError("url host looks invalid")
    if re.fullmatch(r"[0-9.]+", host):
        # an all-numeric dotted host must be a real IPv4 address
        ipaddress.ip_address(host)
    # lowercase scheme and host; keep userinfo, path, and query case intact
    netloc = parts.netloc
    userinfo = ""
    hostport = netloc
    if "@" in netloc:
        userinfo, hostport = netloc.rsplit("@", 1)
        userinfo += "@"
    netloc = userinfo + hostport.lower()
    return urlunsplit((parts.scheme.lower(), netloc, parts.path, parts.query, parts.fragment))


_NORMALIZERS = {
    SignatureType.IP: _norm_ip,
    SignatureType.SUBNET: _norm_subnet,
    SignatureType.PORT: _norm_port,
    SignatureType.HASH: _norm_hash,
    SignatureType.EMAIL: _norm_email,
    SignatureType.URL: _norm_url,
}

# Most-specific-first so e.g. "9000" reads as a port, never a hash fragment.
INFERENCE_ORDER = (
    SignatureType.IP,
    SignatureType.SUBNET,
    SignatureType.PORT,
    SignatureType.HASH,
    SignatureType.EMAIL,
    SignatureType.URL,
)


def parse_signature(raw: str, hint: Optional[SignatureType] = None) -> Signature:
    """Validate and normalize an indicator; infer the kind when no hint given.

    Raises UnparseableSignature when nothing matches, HintMismatch when the
    value fails validation under an explicit hint.
    """
    text = raw.strip()
    if not text:
        raise UnparseableSignature("empty signature value")
    if hint is not None:
        try:
            return Signature(hint, _NORMALIZERS[hint](text))
        except ValueError as exc:
            raise HintMismatch(f"{text!r} is not a valid {hint.value}: {exc}") from exc
    for kind in INFERENCE_ORDER:
        try:
            return Signature(kind, _NORMALIZERS[kind](text))
        except ValueError:
            continue
    raise UnparseableSignature(f"{text!r} matches no known signature kind")


# ---------------------------------------------------------------------------
# Time windows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeWindow:
    """Inclusive [from_date, to_date] bounds; either side may be open."""

    from_date: Optional[datetime] = None
    to_date: Optional[datetime] = None

    def __post_init__(self):
        if self.from_date and self.to_date and self.from_date > self.to_date:
            raise ValueError("window from_date is after to_date")

    @property
    def is_open(self) -> bool:
        return self.from_date is None and self.to_date is None

    def contains(self, ts: datetime) -> bool:
        if self.from_date and ts < self.from_date:
            return False
        if self.to_date and ts > self.to_date:
            return False
        return True

    def to_doc(self) -> dict:
        doc = {}
        if self.from_date:
            doc["from_date"] = format_ts(self.from_date)
        if self.to_date:
            doc["to_date"] = format_ts(self.to_date)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "TimeWindow":
        return cls(
            from_date=parse_ts(doc["from_date"]) if doc.get("from_date") else None,
            to_date=parse_ts(doc["to_date"]) if doc.get("to_date") else None,
        )

    @classmethod
    def last(cls, delta: timedelta, now: datetime) -> "TimeWindow":
        return cls(from_date=now - delta, to_date=now)


# ---------------------------------------------------------------------------
# IoC records
# ---------------------------------------------------------------------------


def record_id(source: str, kind: SignatureType, value: str) -> str:
    """Deterministic record key: hex digest of `source|kind|value`."""
    return hashlib.sha256(f"{source}|{kind.value}|{value}".encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class IocRecord:
    """One normalized indicator of compromise from an OSINT feed."""

    id: str
    signature: Signature
    source: str
    first_reported: datetime
    last_reported: datetime
    threat_label: str = ""
    ports: tuple[int, ...] = ()
    raw: str = ""

    def __post_init__(self):
        if self.last_reported < self.first_reported:
            raise ValueError("last_reported precedes first_reported")
        expected = record_id(self.source, self.signature.kind, self.signature.value)
        if self.id != expected:
            raise ValueError("record id does not match (source, kind, value)")

    @classmethod
    def build(
        cls,
        signature: Signature,
        source: str,
        first_reported: datetime,
        last_reported: Optional[datetime] = None,
        threat_label: str = "",
        ports: tuple[int, ...] = (),
        raw: str = "",
    ) -> "IocRecord":
        return cls(
            id=record_id(source, signature.kind, signature.value),
            signature=signature,
            source=source,
            first_reported=first_reported,
            last_reported=last_reported or first_reported,
            threat_label=threat_label,
            ports=tuple(ports),
            raw=raw,
        )

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "signature": self.signature.to_doc(),
            "source": self.source,
            "first_reported": format_ts(self.first_reported),
            "last_reported": format_ts(self.last_reported),
            "threat_label": self.threat_label,
            "ports": list(self.ports),
            "raw": self.raw,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "IocRecord":
        return cls(
            id=doc["id"],
            signature=Signature.from_doc(doc["signature"]),
            source=doc["source"],
            first_reported=parse_ts(doc["first_reported"]),
            last_reported=parse_ts(doc["last_reported"]),
            threat_label=doc.get("threat_label", ""),
            ports=tuple(doc.get("ports", ())),
            raw=doc.get("raw", ""),
        )


# ---------------------------------------------------------------------------
# Intents and slots
# ---------------------------------------------------------------------------


class GeneralIntent(str, Enum):
    IRRELEVANT = "irrelevant"
    CYBERSECURITY = "cybersecurity"
    QUERY = "query"
    ACTION = "action"


class ActionIntent(str, Enum):
    STATUS = "status"
    SEARCH = "search"
    BLOCK = "block"
    UNBLOCK = "unblock"


_REF_RE = re.compile(r"^\$(\d+)\.([a-z_][a-z0-9_]*)$")


@dataclass(frozen=True)
class StepOutputRef:
    """Reference to a named output of an earlier plan step, e.g. `$1.list_ip`."""

    step_ordinal: int
    output_name: str

    def __post_init__(self):
        if self.step_ordinal < 1:
            raise ValueError("step ordinal must be >= 1")
        if not self.output_name:
            raise ValueError("output name must be nonempty")

    def __str__(self) -> str:
        return f"${self.step_ordinal}.{self.output_name}"

    @classmethod
    def parse(cls, text: str) -> "StepOutputRef":
        m = _REF_RE.match(text.strip())
        if not m:
            raise ValueError(f"not a step-output reference: {text!r}")
        return cls(int(m.group(1)), m.group(2))

    @staticmethod
    def looks_like(text: str) -> bool:
        return bool(_REF_RE.match(text.strip()))


SLOT_NAMES = ("intent", "signature_type", "signature_value", "from_date", "to_date", "quantity")


@dataclass
class SlotSet:
    """The extracted slot values for one request or plan step."""

    intent: Optional[ActionIntent] = None
    signature_type: Optional[SignatureType] = None
    signature_value: Optional[str] = None
    window: TimeWindow = field(default_factory=TimeWindow)
    quantity: Optional[int] = None
    bindings: dict[str, StepOutputRef] = field(default_factory=dict)

    def __post_init__(self):
        if self.quantity is not None and self.quantity < 1:
            raise ValueError("quantity must be >= 1")
        if self.signature_value is not None and self.signature_type is not None:
            # must validate as a Signature under the declared type
            parse_signature(self.signature_value, hint=self.signature_type)
        for name in self.bindings:
            if getattr(self, name, None) is not None and name in (
                "intent",
                "signature_type",
                "signature_value",
                "quantity",
            ):
                raise ValueError(f"slot {name!r} is both direct and bound")

    def has(self, name: str) -> bool:
        """True when the named slot is present directly or via a binding."""
        if name in self.bindings:
            return True
        if name == "from_date":
            return self.window.from_date is not None
        if name == "to_date":
            return self.window.to_date is not None
        if name == "window":
            return not self.window.is_open
        return getattr(self, name, None) is not None

    def to_doc(self) -> dict:
        doc: dict[str, Any] = {}
        if self.intent:
            doc["intent"] = self.intent.value
        if self.signature_type:
            doc["signature_type"] = self.signature_type.value
        if self.signature_value is not None:
            doc["signature_value"] = self.signature_value
        doc.update(self.window.to_doc())
        if self.quantity is not None:
            doc["quantity"] = self.quantity
        if self.bindings:
            doc["bindings"] = {k: str(v) for k, v in sorted(self.bindings.items())}
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "SlotSet":
        return cls(
            intent=ActionIntent(doc["intent"]) if doc.get("intent") else None,
            signature_type=SignatureType(doc["signature_type"]) if doc.get("signature_type") else None,
            signature_value=doc.get("signature_value"),
            window=TimeWindow.from_doc(doc),
            quantity=doc.get("quantity"),
            bindings={k: StepOutputRef.parse(v) for k, v in doc.get("bindings", {}).items()},
        )

    def canonical(self) -> str:
        return canonical_json(self.to_doc())


@dataclass
class PlanStep:
    """One planned step; `guard` gates execution on a prior step's output."""

    ordinal: int
    description: str
    slots: SlotSet
    guard: Optional[StepOutputRef] = None

    def __post_init__(self):
        if self.ordinal < 1:
            raise ValueError("plan step ordinal must be >= 1")
        if self.slots.intent is None:
            raise ValueError("plan step requires an intent")
        for ref in self.slots.bindings.values():
            if ref.step_ordinal >= self.ordinal:
                raise ValueError(f"binding {ref} must reference an earlier step")
        if self.guard and self.guard.step_ordinal >= self.ordinal:
            raise ValueError(f"guard {self.guard} must reference an earlier step")

    def to_doc(self) -> dict:
        doc = {
            "ordinal": self.ordinal,
            "description": self.description,
            "slots": self.slots.to_doc(),
        }
        if self.guard:
            doc["guard"] = str(self.guard)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "PlanStep":
        return cls(
            ordinal=doc["ordinal"],
            description=doc["description"],
            slots=SlotSet.from_doc(doc["slots"]),
            guard=StepOutputRef.parse(doc["guard"]) if doc.get("guard") else None,
        )


def validate_plan(steps: list[PlanStep]) -> list[PlanStep]:
    """Check ordinal contiguity and binding soundness for a whole plan."""
    for i, step in enumerate(steps, start=1):
        if step.ordinal != i:
            raise ValueError(f"plan ordinals must be contiguous from 1; found {step.ordinal} at {i}")
    return steps


# ---------------------------------------------------------------------------
# Conversation
# ---------------------------------------------------------------------------


class Role(str, Enum):
    USER = "user"
    ASSISTANT = "assistant"
    SYSTEM = "system"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str
    timestamp: datetime

    def __post_init__(self):
        if not self.content:
            raise ValueError("message content must be nonempty")

    def to_doc(self) -> dict:
        return {"role": self.role.value, "content": self.content, "timestamp": format_ts(self.timestamp)}

    @classmethod
    def from_doc(cls, doc: dict) -> "ChatMessage":
        return cls(Role(doc["role"]), doc["content"], parse_ts(doc["timestamp"]))


class TurnKind(str, Enum):
    ANSWER = "answer"
    CLARIFICATION = "clarification"
    CONFIRMATION = "confirmation"
    RESULT = "result"


@dataclass
class AgentTurn:
    """The agent's reply: an answer, a clarification, a confirmation ask, or a result."""

    kind: TurnKind
    text: str
    missing_slots: list[str] = field(default_factory=list)
    plan: Optional[list[PlanStep]] = None
    payload: Optional[dict] = None
    retryable: bool = False

    def __post_init__(self):
        if self.kind is TurnKind.CLARIFICATION and not self.missing_slots:
            raise ValueError("clarification must name at least one missing slot")
        if self.kind is TurnKind.CONFIRMATION:
            if not self.plan or not any(
                s.slots.intent in (ActionIntent.BLOCK, ActionIntent.UNBLOCK) for s in self.plan
            ):
                raise ValueError("confirmation request requires a plan with a block/unblock step")

    @classmethod
    def answer(cls, text: str, retryable: bool = False) -> "AgentTurn":
        return cls(TurnKind.ANSWER, text, retryable=retryable)

    @classmethod
    def clarification(cls, text: str, missing: list[str]) -> "AgentTurn":
        return cls(TurnKind.CLARIFICATION, text, missing_slots=list(missing))

    @classmethod
    def confirmation(cls, text: str, plan: list[PlanStep]) -> "AgentTurn":
        return cls(TurnKind.CONFIRMATION, text, plan=plan)

    @classmethod
    def result(cls, text: str, payload: dict) -> "AgentTurn":
        return cls(TurnKind.RESULT, text, payload=payload)

    def to_doc(self) -> dict:
        doc: dict[str, Any] = {"kind": self.kind.value, "text": self.text}
        if self.missing_slots:
            doc["missing_slots"] = list(self.missing_slots)
        if self.plan is not None:
            doc["plan"] = [s.to_doc() for s in self.plan]
        if self.payload is not None:
            doc["payload"] = self.payload
        if self.retryable:
            doc["retryable"] = True
        return doc
