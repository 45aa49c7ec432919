"""Deterministic keyword/pattern backend.

Serves two purposes: a zero-network degraded mode when the remote endpoint
is down, and the generator behind `sentinel fixtures record`. Dispatches on
which chain stage's system prompt it was handed.
"""

from __future__ import annotations

import json
import logging
import re
from datetime import datetime

from ..model import ActionIntent, Role, SignatureType, format_ts, parse_ts, utc_now
from ..timeparse import explicit_window, parse_relative_window
from .gateway import CompletionRequest
from .nlu import scan_port, scan_quantity, scan_refs, scan_signatures, scan_type_word

logger = logging.getLogger(__name__)

_ACTION_RE = re.compile(r"\b(block|unblock|ban|blacklist|quarantine)\b", re.IGNORECASE)
_UNBLOCK_RE = re.compile(r"\b(unblock|unban|allow again|remove the block)\b", re.IGNORECASE)
_QUERY_RE = re.compile(
    r"\b(show|give|list|display|find|fetch|lookup|look up|search|statistics|reported|latest|"
    r"recent|updates?|attacks?|iocs?|indicators?|database|malicious|secure|safe|suspicious|"
    r"how many|status)\b",
    re.IGNORECASE,
)
_STATUS_RE = re.compile(r"\b(is (this|that|the)|whether|do you know if|has .* been reported)\b", re.IGNORECASE)
_GUARD_RE = re.compile(r"\bif\b.*\b(malicious|reported|found|unsafe|bad)\b", re.IGNORECASE)
_ALL_RE = re.compile(r"\b(all|every|each)\b", re.IGNORECASE)
_STATS_RE = re.compile(r"\bstatistics?\b", re.IGNORECASE)
_SECURITY_RE = re.compile(
    r"\b(phishing|malware|ransomware|virus|viruses|firewall|encryption|encrypt|cyber|security|"
    r"hack(?:er|ing)?|breach|ddos|botnet|vulnerabilit(?:y|ies)|exploit|password|authentication|"
    r"vpn|siem|ids|antivirus|zero-day|spyware|trojan|worm|threats?)\b",
    re.IGNORECASE,
)

_TOPIC_NOTES = {
    "phishing": "Phishing is a social-engineering attack where an adversary impersonates a trusted "
    "party, usually over email, to trick a person into revealing credentials or running malware. "
    "Look for mismatched sender domains, urgent language, and unexpected attachments or links.",
    "ransomware": "Ransomware is malware that encrypts a victim's files and demands payment for the "
    "key. Defenses center on offline backups, patching, least privilege, and rapid isolation of "
    "infected hosts.",
    "malware": "Malware is any software built to harm a system: trojans, worms, spyware, and more. "
    "Defense in depth combines endpoint protection, network monitoring, and strict execution policies.",
}


class RuleBasedBackend:
    """Synthesizes deterministic completions for each chain stage."""

    name = "rule-based"

    def complete(self, request: CompletionRequest) -> list[str]:
        system = request.messages[0].content
        text = _last_user_message(request)
        now = _extract_now(system)
        if "planning stage" in system.splitlines()[0]:
            completion = json.dumps(_plan(text, now))
        elif "slot extraction stage" in system.splitlines()[0]:
            completion = json.dumps(_extract(text, system, now), sort_keys=True)
        else:
            completion = _classify(text)
        return [completion] * request.sample_count


def _last_user_message(request: CompletionRequest) -> str:
    for message in reversed(request.messages):
        if message.role is Role.USER:
            return message.content
    return ""


def _extract_now(system: str) -> datetime:
    m = re.search(r"Current date and time: (\S+)", system)
    if m:
        try:
            return parse_ts(m.group(1))
        except ValueError:
            pass
    return utc_now()


# ---------------------------------------------------------------------------
# Stage 1: intent classification
# ---------------------------------------------------------------------------


def _classify(text: str) -> str:
    if _ACTION_RE.search(text):
        return "**action** Understood, preparing the requested security action."
    if _QUERY_RE.search(text):
        return "**query** Let me look that up in the threat intelligence database."
    if _SECURITY_RE.search(text):
        return "**cybersecurity** " + _security_answer(text)
    return (
        "**irrelevant** I am designed to answer cybersecurity and computer security "
        "questions, so I cannot help with that. Ask me about threats, indicators of "
        "compromise, or security actions instead."
    )


def _security_answer(text: str) -> str:
    lower = text.lower()
    for topic, note in _TOPIC_NOTES.items():
        if topic in lower:
            return note
    return (
        "That touches a broad area of security practice. The essentials: keep systems "
        "patched, restrict privileges to the minimum needed, monitor for anomalies, and "
        "have a tested response plan for when something slips through."
    )


# ---------------------------------------------------------------------------
# Stage 2a: step planning
# ---------------------------------------------------------------------------


def _plan(text: str, now: datetime) -> list[dict]:
    signatures = scan_signatures(text)
    port = scan_port(text)
    window = parse_relative_window(text, now) or explicit_window(text)
    quantity = scan_quantity(text)
    stats = bool(_STATS_RE.search(text))

    if _ACTION_RE.search(text):
        verb = "unblock" if _UNBLOCK_RE.search(text) else "block"
        target = signatures[0] if signatures else None
        if target and _GUARD_RE.search(text):
            return [
                {
                    "step": 1,
                    "intent": "status",
                    "description": _status_description(target.kind.value, target.value),
                },
                {
                    "step": 2,
                    "intent": verb,
                    "description": f"{verb.capitalize()} the {target.kind.value} {target.value} on the SIEM.",
                    "guard": "$1.found",
                },
            ]
        if target is None and _ALL_RE.search(text) and window is not None:
            kind = scan_type_word(text) or SignatureType.IP
            return [
                {
                    "step": 1,
                    "intent": "search",
                    "description": _search_description(kind.value, None, window, None, False),
                },
                {
                    "step": 2,
                    "intent": verb,
                    "description": f"{verb.capitalize()} the {kind.value} addresses in $1.list_ip on the SIEM.",
                },
            ]
        if target is not None:
            return [
                {
                    "step": 1,
                    "intent": verb,
                    "description": f"{verb.capitalize()} the {target.kind.value} {target.value} on the SIEM.",
                }
            ]
        return [{"step": 1, "intent": verb, "description": f"{verb.capitalize()} the requested signature on the SIEM."}]

    # queries: status lookups for "is this X ..." shapes, searches otherwise
    if signatures and (_STATUS_RE.search(text) or re.search(r"\b(malicious|secure|safe)\b", text, re.IGNORECASE)):
        target = signatures[0]
        return [{"step": 1, "intent": "status", "description": _status_description(target.kind.value, target.value)}]

    kind = None
    sig = signatures[0] if signatures else port
    if sig is None:
        kind_word = scan_type_word(text)
        kind = kind_word.value if kind_word else None
    return [
        {
            "step": 1,
            "intent": "search",
            "description": _search_description(kind, sig, window, quantity, stats),
        }
    ]


def _status_description(kind: str, value: str) -> str:
    return f"Check whether the {kind} {value} is reported in the threat intelligence database."


def _search_description(kind, sig, window, quantity, stats) -> str:
    parts = ["Search the threat intelligence database for"]
    parts.append(f"{kind} records" if kind else "records")
    if sig is not None:
        if sig.kind is SignatureType.PORT:
            parts.append(f"targeting port {sig.value}")
        else:
            parts.append(f"matching the {sig.kind.value} {sig.value}")
    if window is not None and window.from_date is not None:
        parts.append(f"reported between {format_ts(window.from_date)} and {format_ts(window.to_date or window.from_date)}")
    if quantity:
        parts.append(f"limited to {quantity} results")
    sentence = " ".join(parts) + "."
    if stats:
        sentence += " Report the statistics of the matching records."
    return sentence


# ---------------------------------------------------------------------------
# Stage 2b: slot extraction
# ---------------------------------------------------------------------------


def _extract(step_text: str, system: str, now: datetime) -> dict:
    slots: dict = {}
    m = re.search(r"The step's intent is: (\w+)", system)
    if m and m.group(1) in [i.value for i in ActionIntent]:
        slots["intent"] = m.group(1)

    refs = scan_refs(step_text)
    if refs:
        slots["signature_value"] = str(refs[0])
        kind_word = scan_type_word(step_text)
        if kind_word:
            slots["signature_type"] = kind_word.value
    else:
        signatures = scan_signatures(step_text)
        port = scan_port(step_text)
        target = signatures[0] if signatures else port
        if target is not None:
            slots["signature_type"] = target.kind.value
            slots["signature_value"] = target.value
        else:
            kind_word = scan_type_word(step_text)
            if kind_word:
                slots["signature_type"] = kind_word.value

    window = explicit_window(step_text) or parse_relative_window(step_text, now)
    if window is not None:
        if window.from_date:
            slots["from_date"] = format_ts(window.from_date)
        if window.to_date:
            slots["to_date"] = format_ts(window.to_date)

    quantity = scan_quantity(step_text)
    if quantity:
        slots["quantity"] = quantity
    return slots
