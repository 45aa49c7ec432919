"""Deterministic utterance scanning used by the rule-based backend.

Keyword and pattern heuristics only; no sampling, no state. Signature
candidates are validated through the real parser so nothing malformed
leaks out of here.
"""

from __future__ import annotations

import re
from typing import Optional

from ..model import (
    Signature,
    SignatureType,
    StepOutputRef,
    UnparseableSignature,
    HintMismatch,
    parse_signature,
)

_CIDR_RE = re.compile(r"^\d{1,3}(\.\d{1,3}){3}/\d{1,2}$")
_DOTTED_QUAD_RE = re.compile(r"^\d{1,3}(\.\d{1,3}){3}$")
_HEX_RE = re.compile(r"^[0-9a-fA-F]{32}$|^[0-9a-fA-F]{40}$|^[0-9a-fA-F]{64}$")
_HOSTY_RE = re.compile(r"^[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}(/\S*)?$")
_PORT_PHRASE_RE = re.compile(r"\bports?\s+(\d{1,5})\b", re.IGNORECASE)
_QUANTITY_RES = (
    re.compile(r"\b(?:top|first)\s+(\d+)\b", re.IGNORECASE),
    re.compile(r"\blatest\s+(\d+)\b", re.IGNORECASE),
    re.compile(r"\b(\d+)\s+(?:results|records|entries|iocs)\b", re.IGNORECASE),
)

_TYPE_WORDS = (
    (re.compile(r"\bsubnets?\b", re.IGNORECASE), SignatureType.SUBNET),
    (re.compile(r"\bip(?:v[46])?(?:\s+address(?:es)?)?\b|\bips\b", re.IGNORECASE), SignatureType.IP),
    (re.compile(r"\be-?mails?(?:\s+address(?:es)?)?\b", re.IGNORECASE), SignatureType.EMAIL),
    (re.compile(r"\b(?:hash(?:es)?|md5|sha-?1|sha-?256)\b", re.IGNORECASE), SignatureType.HASH),
    (re.compile(r"\burls?\b|\blinks?\b", re.IGNORECASE), SignatureType.URL),
    (re.compile(r"\bports?\b", re.IGNORECASE), SignatureType.PORT),
)


def _clean_token(token: str) -> str:
    return token.strip(".,;:?!\"'()[]{}<>")


def scan_signatures(text: str) -> list[Signature]:
    """Concrete signature values in the text, in order, deduplicated."""
    found: list[Signature] = []
    seen = set()
    for raw_token in text.split():
        token = _clean_token(raw_token)
        if not token or StepOutputRef.looks_like(token):
            continue
        sig = _classify_token(token)
        if sig and (sig.kind, sig.value) not in seen:
            seen.add((sig.kind, sig.value))
            found.append(sig)
    return found


def _classify_token(token: str) -> Optional[Signature]:
    hint = None
    if _CIDR_RE.match(token):
        hint = SignatureType.SUBNET
    elif _DOTTED_QUAD_RE.match(token):
        hint = SignatureType.IP
    elif "@" in token:
        hint = SignatureType.EMAIL
    elif _HEX_RE.match(token):
        hint = SignatureType.HASH
    elif "://" in token or token.lower().startswith("www.") or _HOSTY_RE.match(token):
        hint = SignatureType.URL
    if hint is None:
        return None
    try:
        return parse_signature(token, hint=hint)
    except (UnparseableSignature, HintMismatch):
        return None


def scan_port(text: str) -> Optional[Signature]:
    m = _PORT_PHRASE_RE.search(text)
    if not m:
        return None
    try:
        return parse_signature(m.group(1), hint=SignatureType.PORT)
    except (UnparseableSignature, HintMismatch):
        return None


def scan_quantity(text: str) -> Optional[int]:
    for pattern in _QUANTITY_RES:
        m = pattern.search(text)
        if m:
            value = int(m.group(1))
            if value >= 1:
                return value
    return None


def scan_type_word(text: str) -> Optional[SignatureType]:
    """First signature-type keyword by position in the text."""
    best: tuple[int, Optional[SignatureType]] = (len(text) + 1, None)
    for pattern, kind in _TYPE_WORDS:
        m = pattern.search(text)
        if m and m.start() < best[0]:
            best = (m.start(), kind)
    return best[1]


def scan_refs(text: str) -> list[StepOutputRef]:
    refs = []
    for raw_token in text.split():
        token = _clean_token(raw_token)
        if token and StepOutputRef.looks_like(token):
            refs.append(StepOutputRef.parse(token))
    return refs
