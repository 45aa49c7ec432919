"""Compiles completed plans into store queries and SIEM commands and runs them.

Query steps publish named outputs (list_ip, found, count, records) that later
steps consume through bindings; guarded steps are skipped, never failed, when
their predicate is false.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from .model import (
    ActionIntent,
    PlanStep,
    SentinelError,
    Signature,
    SignatureType,
    SlotSet,
    StepOutputRef,
    parse_signature,
)
from .siem import CommandKind, SiemCommand, SiemUnavailable
from .store import IocStore, QueryResult, StoreFilter

logger = logging.getLogger(__name__)

DEFAULT_LIST_NAME = "sentinel-blacklist"
DEFAULT_CDB_VALUE = "sentinel"

# outputs a query step publishes for later bindings
STEP_OUTPUT_NAMES = ("list_ip", "found", "count", "records")


class IncompleteSlots(SentinelError):
    code = "IncompleteSlots"


class EmptyBinding(SentinelError):
    code = "EmptyBinding"


class GuardUnresolvable(SentinelError):
    code = "GuardUnresolvable"


@dataclass
class StepOutcome:
    ordinal: int
    intent: ActionIntent
    status: str  # ok | skipped | failed
    reason: str = ""
    payload: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        doc = {"ordinal": self.ordinal, "intent": self.intent.value, "status": self.status}
        if self.reason:
            doc["reason"] = self.reason
        if self.payload:
            doc["payload"] = self.payload
        return doc


@dataclass
class ExecutionReport:
    steps: list[StepOutcome]
    commands_issued: list[SiemCommand]
    duration_seconds: float

    def to_doc(self) -> dict:
        return {
            "steps": [s.to_doc() for s in self.steps],
            "commands_issued": [c.to_doc() for c in self.commands_issued],
            "command_total": len(self.commands_issued),
            "duration_seconds": round(self.duration_seconds, 6),
        }


def compile_query(slots: SlotSet) -> StoreFilter:
    """Slot-to-filter mapping; a concrete signature supersedes the index type."""
    signature = None
    index_type = slots.signature_type
    if slots.signature_value is not None:
        signature = parse_signature(slots.signature_value, hint=slots.signature_type)
        index_type = None
    return StoreFilter(
        index_type=index_type,
        signature=signature,
        window=slots.window,
        limit=slots.quantity,
    )


def compile_action(
    step: PlanStep,
    resolved_bindings: dict[str, object],
    list_name: str = DEFAULT_LIST_NAME,
    cdb_value: str = DEFAULT_CDB_VALUE,
    scope: str = "all",
) -> list[SiemCommand]:
    """Expand a block/unblock step into deduplicated SIEM commands.

    IPs and subnets get a CDB entry plus a network-level active response;
    hashes, emails, urls, and ports get the CDB entry only.
    """
    intent = step.slots.intent
    if intent not in (ActionIntent.BLOCK, ActionIntent.UNBLOCK):
        raise IncompleteSlots(f"step {step.ordinal} is not an action step")

    values: list[str] = []
    if step.slots.signature_value is not None:
        values = [step.slots.signature_value]
    elif "signature_value" in step.slots.bindings:
        bound = resolved_bindings.get("signature_value")
        if bound is None:
            raise IncompleteSlots(f"binding {step.slots.bindings['signature_value']} was not resolved")
        values = [str(v) for v in bound] if isinstance(bound, (list, tuple)) else [str(bound)]
        if not values:
            raise EmptyBinding(f"binding {step.slots.bindings['signature_value']} resolved to nothing")
    else:
        raise IncompleteSlots(f"step {step.ordinal} has no signature value")

    commands: list[SiemCommand] = []
    seen = set()
    for raw in values:
        sig = parse_signature(raw, hint=step.slots.signature_type)
        pair = _commands_for(sig, intent, list_name, cdb_value, scope)
        for cmd in pair:
            if cmd not in seen:
                seen.add(cmd)
                commands.append(cmd)
    return commands


def _commands_for(
    sig: Signature, intent: ActionIntent, list_name: str, cdb_value: str, scope: str
) -> list[SiemCommand]:
    adding = intent is ActionIntent.BLOCK
    cdb = SiemCommand(
        kind=CommandKind.CDB_ADD if adding else CommandKind.CDB_REMOVE,
        list_name=list_name,
        key=sig.value,
        value=cdb_value if adding else "",
    )
    if sig.kind in (SignatureType.IP, SignatureType.SUBNET):
        response = SiemCommand(
            kind=CommandKind.AR_BLOCK if adding else CommandKind.AR_UNBLOCK,
            target=sig.value,
            scope=scope,
        )
        return [cdb, response]
    return [cdb]


def evaluate_guard(guard: StepOutputRef, outputs: dict[int, dict], outcomes: list[StepOutcome]) -> bool:
    """True iff the referenced prior step completed and its output is truthy."""
    prior = next((o for o in outcomes if o.ordinal == guard.step_ordinal), None)
    if prior is None or prior.status != "ok":
        raise GuardUnresolvable(f"step {guard.step_ordinal} did not complete")
    step_outputs = outputs.get(guard.step_ordinal, {})
    if guard.output_name not in step_outputs:
        raise GuardUnresolvable(f"step {guard.step_ordinal} published no {guard.output_name!r}")
    return bool(step_outputs[guard.output_name])


class Executor:
    """Runs confirmed plans against the store and the SIEM connector."""

    def __init__(
        self,
        store: IocStore,
        siem,
        list_name: str = DEFAULT_LIST_NAME,
        cdb_value: str = DEFAULT_CDB_VALUE,
        scope: str = "all",
    ):
        self.store = store
        self.siem = siem
        self.list_name = list_name
        self.cdb_value = cdb_value
        self.scope = scope

    def execute(self, plan: list[PlanStep]) -> ExecutionReport:
        started = time.monotonic()
        outputs: dict[int, dict] = {}
        outcomes: list[StepOutcome] = []
        commands_issued: list[SiemCommand] = []
        halted = False

        for step in plan:
            intent = step.slots.intent
            if halted:
                outcomes.append(StepOutcome(step.ordinal, intent, "skipped", "a prior step failed"))
                continue

            if step.guard is not None:
                try:
                    if not evaluate_guard(step.guard, outputs, outcomes):
                        outcomes.append(
                            StepOutcome(step.ordinal, intent, "skipped", f"guard {step.guard} was false")
                        )
                        continue
                except GuardUnresolvable as exc:
                    outcomes.append(
                        StepOutcome(step.ordinal, intent, "skipped", f"guard unresolvable: {exc.message}")
                    )
                    continue

            try:
                if intent in (ActionIntent.SEARCH, ActionIntent.STATUS):
                    outcome, step_outputs = self._run_query_step(step)
                    outputs[step.ordinal] = step_outputs
                    outcomes.append(outcome)
                else:
                    outcome, issued = self._run_action_step(step, outputs)
                    commands_issued.extend(issued)
                    outcomes.append(outcome)
                    if outcome.status == "failed":
                        halted = True
            except SiemUnavailable as exc:
                outcomes.append(StepOutcome(step.ordinal, intent, "failed", exc.message))
                halted = True

        return ExecutionReport(
            steps=outcomes,
            commands_issued=commands_issued,
            duration_seconds=time.monotonic() - started,
        )

    def _run_query_step(self, step: PlanStep) -> tuple[StepOutcome, dict]:
        slots = step.slots
        if slots.intent is ActionIntent.STATUS:
            if slots.signature_value is None:
                raise IncompleteSlots(f"status step {step.ordinal} has no signature")
            sig = parse_signature(slots.signature_value, hint=slots.signature_type)
            verdict = self.store.lookup_status(sig)
            records = [r.to_doc() for r in verdict.records]
            payload = {
                "signature": sig.to_doc(),
                "found": verdict.found,
                "count": len(verdict.records),
                "records": records,
            }
            step_outputs = {
                "found": verdict.found,
                "count": len(verdict.records),
                "records": records,
                "list_ip": _ip_values(verdict.records),
            }
            return StepOutcome(step.ordinal, slots.intent, "ok", payload=payload), step_outputs

        flt = compile_query(slots)
        result = self.store.query(flt)
        payload = {
            "filter": flt.to_doc(),
            "total_matched": result.total_matched,
            "shown": len(result.records),
            "truncated": result.truncated,
            "records": [r.to_doc() for r in result.records],
        }
        if "statistic" in step.description.lower():
            payload["stats"] = self.store.stats(slots.window).to_doc()
        step_outputs = {
            "found": result.total_matched > 0,
            "count": result.total_matched,
            "records": payload["records"],
            "list_ip": _ip_values(result.records),
        }
        return StepOutcome(step.ordinal, slots.intent, "ok", payload=payload), step_outputs

    def _run_action_step(self, step: PlanStep, outputs: dict[int, dict]) -> tuple[StepOutcome, list[SiemCommand]]:
        resolved: dict[str, object] = {}
        for name, ref in step.slots.bindings.items():
            source = outputs.get(ref.step_ordinal, {})
            if ref.output_name not in source:
                return (
                    StepOutcome(step.ordinal, step.slots.intent, "failed", f"binding {ref} is unresolved"),
                    [],
                )
            resolved[name] = source[ref.output_name]
        try:
            commands = compile_action(
                step, resolved, list_name=self.list_name, cdb_value=self.cdb_value, scope=self.scope
            )
        except EmptyBinding as exc:
            return StepOutcome(step.ordinal, step.slots.intent, "skipped", exc.message), []

        issued: list[SiemCommand] = []
        for cmd in commands:
            self.siem.issue(cmd)  # SiemUnavailable propagates to execute()
            issued.append(cmd)
        payload = {"commands": [c.to_doc() for c in issued], "command_count": len(issued)}
        return StepOutcome(step.ordinal, step.slots.intent, "ok", payload=payload), issued


def _ip_values(records) -> list[str]:
    values = []
    for rec in records:
        if rec.signature.kind is SignatureType.IP and rec.signature.value not in values:
            values.append(rec.signature.value)
    return values


# ---------------------------------------------------------------------------
# Operator-facing summaries
# ---------------------------------------------------------------------------


def describe_filter(flt: StoreFilter) -> str:
    parts = []
    if flt.index_type:
        parts.append(f"type={flt.index_type.value}")
    if flt.signature:
        parts.append(f"{flt.signature.kind.value}={flt.signature.value}")
    if flt.window.from_date:
        parts.append(f"from {flt.window.to_doc()['from_date']}")
    if flt.window.to_date:
        parts.append(f"to {flt.window.to_doc()['to_date']}")
    if flt.sources is not None:
        parts.append("sources=" + ",".join(sorted(flt.sources)))
    if flt.limit is not None:
        parts.append(f"limit={flt.limit}")
    return ", ".join(parts) if parts else "no filter"


def summarize_query(result: QueryResult, filter_text: str, top: int = 5) -> str:
    """Deterministic result rendering; every number comes from the payload."""
    lines = [f"Matched {result.total_matched} record(s) for {filter_text}."]
    if result.truncated:
        lines.append(f"Showing the first {len(result.records)} (result was truncated).")
    for rec in result.records[:top]:
        doc = rec.to_doc()
        lines.append(
            f"- {doc['signature']['kind']} {doc['signature']['value']} "
            f"[{doc['source']}] last reported {doc['last_reported']}"
        )
    if len(result.records) > top:
        lines.append("- ... (remaining records in the attached table)")
    return "\n".join(lines)


def summarize_report(report: ExecutionReport) -> str:
    lines = []
    for outcome in report.steps:
        head = f"Step {outcome.ordinal} ({outcome.intent.value}): {outcome.status}"
        if outcome.status == "ok" and "found" in outcome.payload:
            head += " (found)" if outcome.payload["found"] else " (not found)"
        elif outcome.status == "ok" and "total_matched" in outcome.payload:
            head += f" with {outcome.payload['total_matched']} matching record(s)"
        elif outcome.status == "ok" and "command_count" in outcome.payload:
            head += f", issued {outcome.payload['command_count']} command(s)"
        if outcome.reason:
            head += f" because {outcome.reason}"
        lines.append(head)
    lines.append(f"Commands issued: {len(report.commands_issued)}")
    return "\n".join(lines)
