"""Dialogue engine: classify, plan, extract, track state, clarify, confirm.

The two-stage flow: stage 1 labels the general intent and lets the model
answer irrelevant/cybersecurity questions directly; stage 2 chains a step
planner and a per-step slot extractor with self-consistency voting, then
hands completed plans to the executor. Destructive steps stop at an
explicit confirmation gate unless auto-confirm is enabled.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Optional

from .clock import Clock, SystemClock
from .executor import Executor, summarize_report
from .llm.gateway import (
    BackendTimeout,
    CompletionRequest,
    Gateway,
    RateLimited,
    TemplateSet,
    UnlabeledResponse,
    parse_label,
    vote,
)
from .model import (
    ActionIntent,
    AgentTurn,
    ChatMessage,
    GeneralIntent,
    HintMismatch,
    PlanStep,
    Role,
    SentinelError,
    SignatureType,
    SlotSet,
    StepOutputRef,
    TimeWindow,
    UnparseableSignature,
    parse_signature,
    parse_ts,
    validate_plan,
)
from .timeparse import explicit_window, parse_relative_window

logger = logging.getLogger(__name__)

EXPLICIT = "explicit"
INFERRED = "inferred"
BOUND = "bound"
_PROVENANCE_RANK = {INFERRED: 1, EXPLICIT: 2, BOUND: 2}

_AFFIRM_RE = re.compile(
    r"^\s*(yes|y|yeah|yep|sure|ok|okay|confirm|confirmed|affirm|proceed|go ahead|do it)\b",
    re.IGNORECASE,
)
_DENY_RE = re.compile(
    r"^\s*(no|n|nope|cancel|deny|denied|stop|abort|don'?t|negative)\b",
    re.IGNORECASE,
)


class PlanParseFailure(SentinelError):
    code = "PlanParseFailure"


class ExtractionParseFailure(SentinelError):
    code = "ExtractionParseFailure"


class ConflictingIntent(SentinelError):
    code = "ConflictingIntent"


class Awaiting(str, Enum):
    NONE = "none"
    MISSING_SLOTS = "missing_slots"
    CONFIRMATION = "confirmation"


@dataclass
class SlotDelta:
    """One turn's slot contribution: values plus per-slot provenance tags."""

    slots: SlotSet
    provenance: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.present_names():
            raise ValueError("slot delta must carry at least one field")

    def present_names(self) -> list[str]:
        names = [n for n in ("intent", "signature_type", "signature_value", "quantity") if getattr(self.slots, n) is not None]
        if self.slots.window.from_date is not None:
            names.append("from_date")
        if self.slots.window.to_date is not None:
            names.append("to_date")
        names.extend(self.slots.bindings.keys())
        return names


@dataclass
class DialogState:
    """Per-session conversation state; one instance per session, never shared."""

    session_id: str
    history: list[ChatMessage]
    accumulated: SlotSet = field(default_factory=SlotSet)
    provenance: dict[str, str] = field(default_factory=dict)
    pending_plan: Optional[list[PlanStep]] = None
    current_step: Optional[int] = None
    awaiting: Awaiting = Awaiting.NONE
    missing: list[str] = field(default_factory=list)
    clock: Clock = field(default_factory=SystemClock)

    def to_doc(self) -> dict:
        return {
            "session_id": self.session_id,
            "history": [m.to_doc() for m in self.history],
            "accumulated": self.accumulated.to_doc(),
            "provenance": dict(self.provenance),
            "pending_plan": [s.to_doc() for s in self.pending_plan] if self.pending_plan else None,
            "current_step": self.current_step,
            "awaiting": self.awaiting.value,
            "missing": list(self.missing),
        }

    @classmethod
    def from_doc(cls, doc: dict, clock: Clock) -> "DialogState":
        return cls(
            session_id=doc["session_id"],
            history=[ChatMessage.from_doc(m) for m in doc["history"]],
            accumulated=SlotSet.from_doc(doc.get("accumulated", {})),
            provenance=dict(doc.get("provenance", {})),
            pending_plan=[PlanStep.from_doc(s) for s in doc["pending_plan"]] if doc.get("pending_plan") else None,
            current_step=doc.get("current_step"),
            awaiting=Awaiting(doc.get("awaiting", "none")),
            missing=list(doc.get("missing", [])),
            clock=clock,
        )


def new_state(session_id: str, clock: Clock, templates: Optional[TemplateSet] = None) -> DialogState:
    system = (templates or TemplateSet()).render_intent(clock.now())
    return DialogState(session_id=session_id, history=[system], clock=clock)


# ---------------------------------------------------------------------------
# Required slots
# ---------------------------------------------------------------------------

_PAIR = ("signature_type", "signature_value")


def required_slots(intent: ActionIntent) -> set[str]:
    """Slots an intent cannot run without; Search is disjunctive (see missing_slots)."""
    if intent is ActionIntent.SEARCH:
        return {"signature_type", "signature_value", "window", "quantity"}
    return set(_PAIR)


def missing_slots(intent: ActionIntent, slots: SlotSet) -> list[str]:
    """Names of absent required slots; empty means the step can run.

    Status/Block/Unblock need the signature pair (bound values count).
    Search needs at least one of: the signature pair, a window, a quantity;
    a lone signature_type asks for its value, a blank slate names every option.
    """
    if intent in (ActionIntent.STATUS, ActionIntent.BLOCK, ActionIntent.UNBLOCK):
        return sorted(name for name in _PAIR if not slots.has(name))
    has_pair = slots.has("signature_type") and slots.has("signature_value")
    if has_pair or slots.has("window") or slots.has("quantity"):
        return []
    if slots.has("signature_type"):
        return ["signature_value"]
    if slots.has("signature_value"):
        return ["signature_type"]
    return ["quantity", "signature_type", "signature_value", "window"]


# ---------------------------------------------------------------------------
# Slot merging
# ---------------------------------------------------------------------------


def merge(accumulated: SlotSet, delta: SlotDelta, provenance: Optional[dict[str, str]] = None) -> tuple[SlotSet, dict[str, str]]:
    """Later writes win, except an inferred value never replaces an explicit one.

    Returns the merged slots plus the updated provenance map. Passing the
    prior provenance map enables the explicit-over-inferred rule across calls.
    """
    prior = dict(provenance or {})
    doc = accumulated.to_doc()
    bindings = dict(accumulated.bindings)

    def rank(tag: str) -> int:
        return _PROVENANCE_RANK.get(tag, 2)

    for name in delta.present_names():
        new_tag = delta.provenance.get(name, EXPLICIT)
        old_tag = prior.get(name)
        if old_tag is not None and rank(new_tag) < rank(old_tag):
            continue
        prior[name] = new_tag
        if name in delta.slots.bindings:
            bindings[name] = delta.slots.bindings[name]
            doc.pop(name, None)
            continue
        if name == "from_date":
            doc["from_date"] = delta.slots.window.to_doc()["from_date"]
        elif name == "to_date":
            doc["to_date"] = delta.slots.window.to_doc()["to_date"]
        else:
            value = getattr(delta.slots, name)
            doc[name] = value.value if hasattr(value, "value") else value
            bindings.pop(name, None)
    doc.pop("bindings", None)
    merged = SlotSet.from_doc(doc)
    merged.bindings = bindings
    return merged, prior


def merge_slots(accumulated: SlotSet, delta: SlotDelta) -> SlotSet:
    """The pure variant when no prior provenance is being tracked."""
    return merge(accumulated, delta)[0]


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


@dataclass
class EngineConfig:
    auto_confirm: bool = False
    history_window: int = 20
    extraction_samples: int = 3
    extraction_temperature: float = 0.7
    classify_temperature: float = 0.0
    max_output: int = 1024


class DialogueEngine:
    def __init__(
        self,
        gateway: Gateway,
        executor: Executor,
        templates: Optional[TemplateSet] = None,
        config: Optional[EngineConfig] = None,
    ):
        self.gateway = gateway
        self.executor = executor
        self.templates = templates or TemplateSet()
        self.config = config or EngineConfig()
        self._observers: list = []

    def add_observer(self, callback) -> None:
        """callback(kind, payload) is told about plans, clarifications, results."""
        self._observers.append(callback)

    def _notify(self, kind: str, payload: dict) -> None:
        for callback in self._observers:
            callback(kind, payload)

    # -- stage 1 -------------------------------------------------------------

    def classify(self, state: DialogState, user_msg: str) -> tuple[GeneralIntent, Optional[str]]:
        now = state.clock.now()
        request = CompletionRequest(
            messages=[self.templates.render_intent(now)]
            + state.history[1:][-self.config.history_window:]
            + [ChatMessage(Role.USER, user_msg, now)],
            temperature=self.config.classify_temperature,
            sample_count=1,
            max_output=self.config.max_output,
        )
        completion = self.gateway.complete(request)[0]
        try:
            labeled = parse_label(completion)
        except UnlabeledResponse:
            completion = self.gateway.complete(request)[0]  # one retry
            try:
                labeled = parse_label(completion)
            except UnlabeledResponse:
                return GeneralIntent.CYBERSECURITY, completion
        if labeled.label in (GeneralIntent.IRRELEVANT, GeneralIntent.CYBERSECURITY):
            return labeled.label, labeled.body
        return labeled.label, None

    # -- stage 2 -------------------------------------------------------------

    def plan(self, state: DialogState, user_msg: str, now: datetime) -> list[PlanStep]:
        request = CompletionRequest(
            messages=[self.templates.render_planner(now)]
            + state.history[1:][-self.config.history_window:]
            + [ChatMessage(Role.USER, user_msg, now)],
            temperature=self.config.classify_temperature,
            sample_count=1,
            max_output=self.config.max_output,
        )
        completion = self.gateway.complete(request)[0]
        raw_steps = _parse_plan_json(completion)
        user_relative = parse_relative_window(user_msg, now)
        steps: list[PlanStep] = []
        for raw in raw_steps:
            ordinal = int(raw["step"])
            intent = ActionIntent(raw["intent"])
            description = str(raw["description"])
            guard = StepOutputRef.parse(raw["guard"]) if raw.get("guard") else None
            delta = self.extract_slots(description, intent, now, prior_steps=steps)
            if user_relative is not None:
                # window came from a relative phrase in the user's message
                for name in ("from_date", "to_date"):
                    if name in delta.provenance:
                        delta.provenance[name] = INFERRED
            slots = merge_slots(SlotSet(intent=intent), delta)
            slots.intent = intent  # the planner's intent is authoritative for the step
            try:
                step = PlanStep(ordinal=ordinal, description=description, slots=slots, guard=guard)
            except ValueError as exc:
                raise PlanParseFailure(f"invalid step {ordinal}: {exc}") from exc
            steps.append(step)
        try:
            validate_plan(steps)
        except ValueError as exc:
            raise PlanParseFailure(str(exc)) from exc
        self._notify("plan", {"steps": [s.to_doc() for s in steps]})
        return steps

    def extract_slots(
        self,
        step_text: str,
        intent_hint: ActionIntent,
        now: datetime,
        prior_steps: Optional[list[PlanStep]] = None,
    ) -> SlotDelta:
        prior_text = "\n".join(
            f"Step {s.ordinal} ({s.slots.intent.value}): outputs $"
            f"{s.ordinal}.list_ip, ${s.ordinal}.found, ${s.ordinal}.count, ${s.ordinal}.records"
            for s in (prior_steps or [])
            if s.slots.intent in (ActionIntent.SEARCH, ActionIntent.STATUS)
        )
        request = CompletionRequest(
            messages=[
                self.templates.render_extractor(now, intent_hint.value, prior_text),
                ChatMessage(Role.USER, step_text, now),
            ],
            temperature=self.config.extraction_temperature,
            sample_count=self.config.extraction_samples,
            max_output=self.config.max_output,
        )
        completions = self.gateway.complete(request)
        candidates = []
        for completion in completions:
            candidate = _parse_slot_candidate(completion)
            if candidate is not None:
                candidates.append(candidate)
        if not candidates:
            raise ExtractionParseFailure(f"no parseable slot candidates for step: {step_text[:80]!r}")
        voted = vote(candidates)
        return self._delta_from_slots(voted, step_text, intent_hint, now)

    def _delta_from_slots(
        self, voted: SlotSet, step_text: str, intent_hint: ActionIntent, now: datetime
    ) -> SlotDelta:
        provenance: dict[str, str] = {}
        doc = voted.to_doc()
        doc.pop("bindings", None)
        bindings = dict(voted.bindings)

        # the deterministic time parser outranks model-proposed dates
        relative = parse_relative_window(step_text, now)
        explicit = explicit_window(step_text)
        window_tag = None
        if relative is not None:
            window = relative
            window_tag = INFERRED
        elif explicit is not None:
            window = explicit
            window_tag = EXPLICIT
        else:
            window = voted.window
            window_tag = INFERRED if not voted.window.is_open else None
        doc.pop("from_date", None)
        doc.pop("to_date", None)
        doc.update(window.to_doc())
        if window_tag:
            if window.from_date is not None:
                provenance["from_date"] = window_tag
            if window.to_date is not None:
                provenance["to_date"] = window_tag
        # a "last N ..." phrase without a stated end means "until now"
        if relative is None and explicit is not None and explicit.to_date is None and _mentions_until_now(step_text):
            doc["to_date"] = TimeWindow(to_date=now).to_doc()["to_date"]
            provenance["to_date"] = INFERRED

        if voted.intent is not None:
            provenance["intent"] = EXPLICIT
        if voted.signature_type is not None:
            provenance["signature_type"] = EXPLICIT
        if voted.signature_value is not None:
            provenance["signature_value"] = EXPLICIT
            if voted.signature_type is not None:
                try:
                    doc["signature_value"] = parse_signature(voted.signature_value, hint=voted.signature_type).value
                except (UnparseableSignature, HintMismatch):
                    # bad pair from the model: drop it and let clarification ask
                    doc.pop("signature_value", None)
                    doc.pop("signature_type", None)
                    provenance.pop("signature_value", None)
                    provenance.pop("signature_type", None)
        if voted.quantity is not None:
            provenance["quantity"] = EXPLICIT
        for name in bindings:
            provenance[name] = BOUND

        if not doc and not bindings:
            doc["intent"] = intent_hint.value
            provenance["intent"] = EXPLICIT
        slots = SlotSet.from_doc(doc)
        slots.bindings = bindings
        return SlotDelta(slots=slots, provenance=provenance)

    # -- orchestration ---------------------------------------------------------

    def next_turn(self, state: DialogState, user_msg: str) -> tuple[DialogState, AgentTurn]:
        """One full turn; the returned state replaces the stored one atomically.

        The user message is appended to history only at commit, so the
        stage requests (which add it themselves) never see it twice.
        """
        now = state.clock.now()
        draft = replace(
            state,
            history=list(state.history),
            accumulated=state.accumulated,
            provenance=dict(state.provenance),
            missing=list(state.missing),
        )
        try:
            if state.awaiting is Awaiting.CONFIRMATION:
                return self._turn_confirmation(draft, user_msg, now)
            if state.awaiting is Awaiting.MISSING_SLOTS:
                return self._turn_slot_fill(draft, user_msg, now)
            return self._turn_fresh(draft, user_msg, now)
        except (BackendTimeout, RateLimited) as exc:
            # transient: report and leave the stored state untouched
            turn = AgentTurn.answer(
                f"The language model backend is unavailable right now ({exc.message}); please retry.",
                retryable=True,
            )
            return state, turn

    def _turn_fresh(self, draft: DialogState, user_msg: str, now: datetime) -> tuple[DialogState, AgentTurn]:
        intent, passthrough = self.classify(draft, user_msg)
        if intent in (GeneralIntent.IRRELEVANT, GeneralIntent.CYBERSECURITY):
            text = (passthrough or "").strip() or "I did not produce an answer; please rephrase."
            return self._commit(draft, user_msg, AgentTurn.answer(text), now)
        try:
            steps = self.plan(draft, user_msg, now)
        except PlanParseFailure as exc:
            turn = AgentTurn.clarification(
                "I could not turn that into a concrete plan. Could you restate the request, "
                "naming the signature or time range you mean?",
                ["intent"],
            )
            self._notify("clarification", {"reason": exc.message, "missing": ["intent"]})
            return self._commit(draft, user_msg, turn, now)
        except ExtractionParseFailure as exc:
            turn = AgentTurn.clarification(
                "I could not extract the details of that request. Could you spell out the "
                "signature value and type?",
                ["signature_value"],
            )
            self._notify("clarification", {"reason": exc.message, "missing": ["signature_value"]})
            return self._commit(draft, user_msg, turn, now)
        draft.accumulated = SlotSet()
        draft.provenance = {}
        for step in steps:
            merged, prov = merge(draft.accumulated, SlotDelta(slots=step.slots, provenance={}), draft.provenance)
            draft.accumulated, draft.provenance = merged, prov
        return self._advance_plan(draft, user_msg, steps, now)

    def _turn_slot_fill(self, draft: DialogState, user_msg: str, now: datetime) -> tuple[DialogState, AgentTurn]:
        assert draft.pending_plan and draft.current_step
        idx = draft.current_step - 1
        step = draft.pending_plan[idx]
        try:
            delta = self.extract_slots(user_msg, step.slots.intent, now, prior_steps=draft.pending_plan[:idx])
        except ExtractionParseFailure:
            turn = AgentTurn.clarification(
                "I still could not read those details. " + _missing_text(draft.missing),
                draft.missing,
            )
            return self._commit(draft, user_msg, turn, now)
        if delta.slots.intent is not None and delta.slots.intent is not step.slots.intent:
            turn = AgentTurn.clarification(
                f"You asked for {step.slots.intent.value}, but that sounds like "
                f"{delta.slots.intent.value}. Should I switch? Please restate the whole request "
                "if so, or give just the missing details to continue.",
                ["intent"],
            )
            self._notify("clarification", {"reason": "ConflictingIntent", "missing": ["intent"]})
            return self._commit(draft, user_msg, turn, now)

        try:
            merged, prov = merge(step.slots, delta, draft.provenance)
        except (ValueError, HintMismatch, UnparseableSignature):
            turn = AgentTurn.clarification(
                "Those details do not fit together (the value does not validate under the "
                "stated type). " + _missing_text(draft.missing or ["signature_value"]),
                draft.missing or ["signature_value"],
            )
            return self._commit(draft, user_msg, turn, now)
        merged.intent = step.slots.intent
        draft.provenance = prov
        new_step = PlanStep(ordinal=step.ordinal, description=step.description, slots=merged, guard=step.guard)
        plan = list(draft.pending_plan)
        plan[idx] = new_step
        draft.pending_plan = plan
        acc_merged, acc_prov = merge(draft.accumulated, delta, draft.provenance)
        draft.accumulated, draft.provenance = acc_merged, acc_prov
        return self._advance_plan(draft, user_msg, plan, now)

    def _turn_confirmation(self, draft: DialogState, user_msg: str, now: datetime) -> tuple[DialogState, AgentTurn]:
        if _AFFIRM_RE.match(user_msg):
            return self._execute_pending(draft, user_msg, now, confirmed=True)
        if _DENY_RE.match(user_msg):
            return self._abandon_pending(draft, user_msg, now)
        assert draft.pending_plan
        turn = AgentTurn.confirmation(
            "I need an explicit yes or no before running a destructive action. "
            + _plan_summary(draft.pending_plan),
            draft.pending_plan,
        )
        return self._commit(draft, user_msg, turn, now)

    def confirm(self, state: DialogState, affirm: bool) -> tuple[DialogState, AgentTurn]:
        """Programmatic confirmation (the service's confirm endpoint)."""
        if state.awaiting is not Awaiting.CONFIRMATION or not state.pending_plan:
            raise SentinelError("nothing is pending confirmation")
        now = state.clock.now()
        decision = "yes" if affirm else "no"
        draft = replace(state, history=list(state.history))
        if affirm:
            return self._execute_pending(draft, decision, now, confirmed=True)
        return self._abandon_pending(draft, decision, now)

    # -- helpers ---------------------------------------------------------------

    def _advance_plan(
        self, draft: DialogState, user_msg: str, plan: list[PlanStep], now: datetime
    ) -> tuple[DialogState, AgentTurn]:
        issue = _binding_issue(plan)
        if issue:
            turn = AgentTurn.clarification(
                f"That plan references an output that does not exist ({issue}); "
                "please restate the request.",
                ["intent"],
            )
            draft.pending_plan = None
            draft.current_step = None
            draft.awaiting = Awaiting.NONE
            return self._commit(draft, user_msg, turn, now)
        for step in plan:
            absent = missing_slots(step.slots.intent, step.slots)
            if absent:
                draft.pending_plan = plan
                draft.current_step = step.ordinal
                draft.awaiting = Awaiting.MISSING_SLOTS
                draft.missing = absent
                turn = AgentTurn.clarification(_missing_text(absent), absent)
                self._notify("clarification", {"missing": absent, "step": step.ordinal})
                return self._commit(draft, user_msg, turn, now)
        destructive = [s for s in plan if s.slots.intent in (ActionIntent.BLOCK, ActionIntent.UNBLOCK)]
        if destructive and not self.config.auto_confirm:
            first = destructive[0]
            draft.pending_plan = plan
            draft.current_step = first.ordinal
            draft.awaiting = Awaiting.CONFIRMATION
            draft.missing = []
            turn = AgentTurn.confirmation(_plan_summary(plan), plan)
            self._notify("confirmation", {"plan": [s.to_doc() for s in plan]})
            return self._commit(draft, user_msg, turn, now)
        draft.pending_plan = plan
        return self._execute_pending(draft, user_msg, now, confirmed=not destructive or self.config.auto_confirm)

    def _execute_pending(
        self, draft: DialogState, user_msg: str, now: datetime, confirmed: bool
    ) -> tuple[DialogState, AgentTurn]:
        assert draft.pending_plan is not None
        plan = draft.pending_plan
        report = self.executor.execute(plan)
        payload = {"report": report.to_doc(), "plan": [s.to_doc() for s in plan]}
        text = _result_text(plan, report)
        for cmd in report.commands_issued:
            self._notify("command", cmd.to_doc())
        self._notify("report", report.to_doc())
        draft.pending_plan = None
        draft.current_step = None
        draft.awaiting = Awaiting.NONE
        draft.missing = []
        draft.accumulated = SlotSet()
        draft.provenance = {}
        return self._commit(draft, user_msg, AgentTurn.result(text, payload), now)

    def _abandon_pending(self, draft: DialogState, user_msg: str, now: datetime) -> tuple[DialogState, AgentTurn]:
        draft.pending_plan = None
        draft.current_step = None
        draft.awaiting = Awaiting.NONE
        draft.missing = []
        draft.accumulated = SlotSet()
        draft.provenance = {}
        turn = AgentTurn.answer("Understood; the action was cancelled and nothing was executed.")
        self._notify("confirmation", {"decision": "deny"})
        return self._commit(draft, user_msg, turn, now)

    def _commit(
        self, draft: DialogState, user_msg: str, turn: AgentTurn, now: datetime
    ) -> tuple[DialogState, AgentTurn]:
        draft.history = draft.history + [
            ChatMessage(Role.USER, user_msg, now),
            ChatMessage(Role.ASSISTANT, turn.text or "(empty)", now),
        ]
        return draft, turn


def _mentions_until_now(text: str) -> bool:
    return bool(re.search(r"\b(last|past|since)\b", text, re.IGNORECASE))


def _parse_plan_json(completion: str) -> list[dict]:
    text = _strip_fences(completion)
    start = text.find("[")
    end = text.rfind("]")
    if start == -1 or end == -1 or end < start:
        raise PlanParseFailure("completion contains no step array")
    try:
        data = json.loads(text[start : end + 1])
    except json.JSONDecodeError as exc:
        raise PlanParseFailure(f"step array is not valid JSON: {exc}") from exc
    if not isinstance(data, list) or not data:
        raise PlanParseFailure("step array is empty")
    for item in data:
        if not isinstance(item, dict) or "step" not in item or "intent" not in item or "description" not in item:
            raise PlanParseFailure(f"malformed step entry: {item!r}")
        if item["intent"] not in [i.value for i in ActionIntent]:
            raise PlanParseFailure(f"unknown step intent: {item['intent']!r}")
    return data


def _parse_slot_candidate(completion: str) -> Optional[SlotSet]:
    text = _strip_fences(completion)
    start = text.find("{")
    end = text.rfind("}")
    if start == -1 or end == -1 or end < start:
        return None
    try:
        data = json.loads(text[start : end + 1])
    except json.JSONDecodeError:
        return None
    if not isinstance(data, dict):
        return None
    doc: dict = {}
    bindings: dict[str, StepOutputRef] = {}
    try:
        if data.get("intent"):
            doc["intent"] = ActionIntent(str(data["intent"]).lower()).value
        if data.get("signature_type"):
            doc["signature_type"] = SignatureType(str(data["signature_type"]).lower()).value
        value = data.get("signature_value")
        if value is not None:
            value = str(value)
            if StepOutputRef.looks_like(value):
                bindings["signature_value"] = StepOutputRef.parse(value)
            else:
                doc["signature_value"] = value
        if data.get("from_date"):
            doc["from_date"] = TimeWindow(from_date=parse_ts(str(data["from_date"]))).to_doc()["from_date"]
        if data.get("to_date"):
            doc["to_date"] = TimeWindow(to_date=parse_ts(str(data["to_date"]))).to_doc()["to_date"]
        if data.get("quantity") is not None:
            doc["quantity"] = int(data["quantity"])
        slots = SlotSet.from_doc(doc)
        slots.bindings = bindings
        return slots
    except (ValueError, KeyError, HintMismatch, UnparseableSignature):
        return None


def _strip_fences(text: str) -> str:
    return re.sub(r"```[a-zA-Z]*", "", text).replace("```", "")


def _binding_issue(plan: list[PlanStep]) -> Optional[str]:
    from .executor import STEP_OUTPUT_NAMES

    query_steps = {
        s.ordinal for s in plan if s.slots.intent in (ActionIntent.SEARCH, ActionIntent.STATUS)
    }
    for step in plan:
        refs = list(step.slots.bindings.values())
        if step.guard is not None:
            refs.append(step.guard)
        for ref in refs:
            if ref.step_ordinal not in query_steps or ref.step_ordinal >= step.ordinal:
                return str(ref)
            if ref.output_name not in STEP_OUTPUT_NAMES:
                return str(ref)
    return None


def _missing_text(names: list[str]) -> str:
    pretty = ", ".join(names)
    return (
        f"I need a bit more to proceed. Please provide: {pretty}. "
        "For example, name the signature type and its value, or give a time range."
    )


def _plan_summary(plan: list[PlanStep]) -> str:
    lines = ["This plan includes a destructive action and needs your confirmation:"]
    for step in plan:
        lines.append(f"  {step.ordinal}. [{step.slots.intent.value}] {step.description}")
    lines.append("Reply yes to execute or no to cancel.")
    return "\n".join(lines)


def _result_text(plan: list[PlanStep], report) -> str:
    if len(plan) == 1 and plan[0].slots.intent in (ActionIntent.SEARCH, ActionIntent.STATUS):
        outcome = report.steps[0]
        if outcome.status == "ok" and plan[0].slots.intent is ActionIntent.SEARCH:
            payload = outcome.payload
            lines = [
                f"Matched {payload['total_matched']} record(s); showing {payload['shown']}."
            ]
            if payload.get("truncated"):
                lines.append("The result was truncated; refine the filter to see the rest.")
            if "stats" in payload:
                stats = payload["stats"]
                lines.append(f"Totals by kind over {stats['total']} record(s):")
                for kind, n in stats["counts_by_kind"].items():
                    lines.append(f"- {kind}: {n}")
            else:
                for doc in payload["records"][:5]:
                    lines.append(
                        f"- {doc['signature']['kind']} {doc['signature']['value']} "
                        f"[{doc['source']}] last reported {doc['last_reported']}"
                    )
            return "\n".join(lines)
        if outcome.status == "ok" and plan[0].slots.intent is ActionIntent.STATUS:
            payload = outcome.payload
            sig = payload["signature"]
            if payload["found"]:
                return (
                    f"Yes: {sig['kind']} {sig['value']} is reported in the database "
                    f"({payload['count']} matching record(s))."
                )
            return f"No: {sig['kind']} {sig['value']} is not reported in the database."
    return summarize_report(report)
