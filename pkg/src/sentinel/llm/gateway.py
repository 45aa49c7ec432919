"""Chat-completion abstraction: templates, label protocol, voting, dispatch.

One Gateway fronts an interchangeable backend (remote, scripted, rule-based)
so the rest of the system never knows which one is answering.
"""

from __future__ import annotations

import hashlib
import logging
import re
import string
from dataclasses import dataclass
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Protocol

from ..model import (
    ChatMessage,
    GeneralIntent,
    Role,
    SentinelError,
    SlotSet,
    canonical_json,
    format_ts,
)

logger = logging.getLogger(__name__)

TEMPLATE_IDS = ("intent-classifier", "step-planner", "slot-extractor")


class BackendTimeout(SentinelError):
    code = "BackendTimeout"


class RateLimited(SentinelError):
    code = "RateLimited"

    def __init__(self, message: str = "", retry_after: float = 1.0):
        super().__init__(message)
        self.retry_after = retry_after


class FixtureMiss(SentinelError):
    code = "FixtureMiss"


class UnlabeledResponse(SentinelError):
    code = "UnlabeledResponse"


class TemplateError(SentinelError):
    code = "TemplateError"


# ---------------------------------------------------------------------------
# Requests
# ---------------------------------------------------------------------------


@dataclass
class CompletionRequest:
    messages: list[ChatMessage]
    temperature: float = 0.0
    sample_count: int = 1
    max_output: int = 1024

    def __post_init__(self):
        if not self.messages:
            raise ValueError("request requires at least one message")
        if self.messages[0].role is not Role.SYSTEM:
            raise ValueError("first message must have the system role")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be within [0, 2]")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    def to_doc(self) -> dict:
        # timestamps are deliberately excluded: two requests with the same
        # content must share a digest regardless of when they were sent
        return {
            "messages": [{"role": m.role.value, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "sample_count": self.sample_count,
            "max_output": self.max_output,
        }

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_doc()).encode("utf-8")).hexdigest()


class Backend(Protocol):
    name: str

    def complete(self, request: CompletionRequest) -> list[str]: ...


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

_TEMPLATE_FILES = {
    "intent-classifier": "intent_classifier.txt",
    "step-planner": "step_planner.txt",
    "slot-extractor": "slot_extractor.txt",
}


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str

    def placeholders(self) -> set[str]:
        return {f for _, f, _, _ in string.Formatter().parse(self.body) if f}

    def render(self, **bindings: str) -> str:
        missing = self.placeholders() - set(bindings)
        if missing:
            raise TemplateError(f"template {self.id} is missing bindings: {sorted(missing)}")
        return self.body.format(**{k: bindings[k] for k in self.placeholders()})


def _builtin_template(template_id: str) -> str:
    name = _TEMPLATE_FILES[template_id]
    return resources.files("sentinel.llm").joinpath("templates", name).read_text(encoding="utf-8")


class TemplateSet:
    """The three chain templates; bodies overridable from a config directory."""

    def __init__(self, override_dir: Optional[Path] = None):
        self._templates: dict[str, PromptTemplate] = {}
        for template_id, filename in _TEMPLATE_FILES.items():
            body = None
            if override_dir:
                candidate = Path(override_dir) / filename
                if candidate.exists():
                    body = candidate.read_text(encoding="utf-8")
            if body is None:
                body = _builtin_template(template_id)
            self._templates[template_id] = PromptTemplate(template_id, body)

    def get(self, template_id: str) -> PromptTemplate:
        return self._templates[template_id]

    def render_intent(self, now: datetime) -> ChatMessage:
        body = self.get("intent-classifier").render(now=format_ts(now))
        return ChatMessage(Role.SYSTEM, body, now)

    def render_planner(self, now: datetime) -> ChatMessage:
        body = self.get("step-planner").render(now=format_ts(now))
        return ChatMessage(Role.SYSTEM, body, now)

    def render_extractor(self, now: datetime, intent: str, prior_steps: str) -> ChatMessage:
        body = self.get("slot-extractor").render(
            now=format_ts(now), intent=intent, prior_steps=prior_steps or "(none)"
        )
        return ChatMessage(Role.SYSTEM, body, now)


def render_intent_template(now: datetime, templates: Optional[TemplateSet] = None) -> ChatMessage:
    return (templates or TemplateSet()).render_intent(now)


# ---------------------------------------------------------------------------
# Label protocol
# ---------------------------------------------------------------------------


@dataclass
class LabeledResponse:
    label: GeneralIntent
    body: str


_LABEL_RE = re.compile(
    r"^\s*(?P<open>[*_]{0,3})(?P<label>irrelevant|cybersecurity|query|action)"
    r"(?P<close>[*_]{0,3})(?P<tail>[:.])?\s*",
    re.IGNORECASE,
)


def parse_label(completion: str) -> LabeledResponse:
    """Strip the leading category label and its decorations from a completion."""
    if not completion:
        raise UnlabeledResponse("empty completion")
    m = _LABEL_RE.match(completion)
    if not m:
        raise UnlabeledResponse(f"no category label at start of: {completion[:60]!r}")
    label = GeneralIntent(m.group("label").lower())
    body = completion[m.end():]
    return LabeledResponse(label=label, body=body)


# ---------------------------------------------------------------------------
# Self-consistency voting
# ---------------------------------------------------------------------------


def vote(candidates: list[SlotSet]) -> SlotSet:
    """Majority by canonical form; ties go to the smallest serialization."""
    if not candidates:
        raise ValueError("vote requires at least one candidate")
    tally: dict[str, tuple[int, SlotSet]] = {}
    for cand in candidates:
        key = cand.canonical()
        count, kept = tally.get(key, (0, cand))
        tally[key] = (count + 1, kept)
    best_key = min(tally, key=lambda k: (-tally[k][0], k))
    return tally[best_key][1]


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------

Observer = Callable[[str, dict], None]


class Gateway:
    """Dispatches completion requests and reports traffic to an observer."""

    def __init__(self, backend: Backend, observer: Optional[Observer] = None):
        self.backend = backend
        self._observer = observer

    def _notify(self, kind: str, payload: dict) -> None:
        if self._observer:
            self._observer(kind, payload)

    def complete(self, request: CompletionRequest) -> list[str]:
        self._notify("llm_request", {"backend": self.backend.name, "request": request.to_doc()})
        completions = self.backend.complete(request)
        if len(completions) != request.sample_count:
            raise SentinelError(
                f"backend {self.backend.name} returned {len(completions)} completions, "
                f"expected {request.sample_count}"
            )
        self._notify(
            "llm_response",
            {"backend": self.backend.name, "digest": request.digest(), "completions": completions},
        )
        return completions
