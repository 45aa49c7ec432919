"""LLM gateway: templates, label protocol, voting, and backends."""

from .backends import RecordingBackend, RemoteBackend, ScriptedBackend
from .gateway import (
    Backend,
    BackendTimeout,
    CompletionRequest,
    FixtureMiss,
    Gateway,
    LabeledResponse,
    PromptTemplate,
    RateLimited,
    TemplateError,
    TemplateSet,
    UnlabeledResponse,
    parse_label,
    render_intent_template,
    vote,
)
from .rulebased import RuleBasedBackend

__all__ = [
    "Backend",
    "BackendTimeout",
    "CompletionRequest",
    "FixtureMiss",
    "Gateway",
    "LabeledResponse",
    "PromptTemplate",
    "RateLimited",
    "RecordingBackend",
    "RemoteBackend",
    "RuleBasedBackend",
    "ScriptedBackend",
    "TemplateError",
    "TemplateSet",
    "UnlabeledResponse",
    "parse_label",
    "render_intent_template",
    "vote",
]
