"""Dialog state tracking: merge algebra, required slots, clarification, flows."""

import itertools
import random
from datetime import datetime, timezone

import pytest

from sentinel.clock import FixedClock
from sentinel.dialogue import (
    Awaiting,
    BOUND,
    DialogueEngine,
    EXPLICIT,
    INFERRED,
    PlanParseFailure,
    SlotDelta,
    merge,
    merge_slots,
    missing_slots,
    new_state,
    required_slots,
)
from sentinel.executor import Executor
from sentinel.llm import Gateway, RuleBasedBackend, ScriptedBackend
from sentinel.model import (
    ActionIntent,
    AgentTurn,
    GeneralIntent,
    IocRecord,
    Role,
    SignatureType,
    SlotSet,
    StepOutputRef,
    TimeWindow,
    TurnKind,
    parse_signature,
    parse_ts,
)
from sentinel.siem import MockSiem
from sentinel.store import IocStore

CLOCK = FixedClock("2023-01-02T00:00:00Z")
T1 = parse_ts("2023-01-01T00:00:00Z")
T2 = parse_ts("2023-01-02T00:00:00Z")


def make_engine(records=(), auto_confirm=False, backend=None):
    store = IocStore()
    if records:
        store.upsert_records(list(records))
    siem = MockSiem()
    chosen = backend if backend is not None else RuleBasedBackend()
    engine = DialogueEngine(Gateway(chosen), Executor(store, siem))
    engine.config.auto_confirm = auto_confirm
    return engine, store, siem


def record(value, last="2023-01-02T00:00:00Z", source="anomali"):
    return IocRecord.build(parse_signature(value), source, first_reported=parse_ts(last))


def delta(provenance=EXPLICIT, **kwargs):
    bindings = kwargs.pop("bindings", {})
    slots = SlotSet(**kwargs, bindings=bindings)
    names = SlotDelta(slots=slots, provenance={}).present_names()
    return SlotDelta(slots=slots, provenance={n: provenance for n in names})


class TestMerge:
    def test_single_field_change(self):
        acc = SlotSet(intent=ActionIntent.SEARCH, signature_type=SignatureType.IP)
        out = merge_slots(acc, delta(quantity=5))
        assert out.quantity == 5
        assert out.intent is ActionIntent.SEARCH and out.signature_type is SignatureType.IP

    def test_idempotent(self):
        acc = SlotSet(intent=ActionIntent.SEARCH)
        d = delta(signature_type=SignatureType.URL, signature_value="http://x.example.com")
        once = merge_slots(acc, d)
        twice = merge_slots(once, d)
        assert once.canonical() == twice.canonical()

    def test_explicit_beats_inferred(self):
        acc, prov = merge(SlotSet(), delta(provenance=INFERRED, window=TimeWindow(T1, T2)))
        assert prov == {"from_date": INFERRED, "to_date": INFERRED}
        newer = delta(window=TimeWindow(parse_ts("2022-12-01"), T2))
        out, prov = merge(acc, newer, prov)
        assert out.window.from_date == parse_ts("2022-12-01")
        assert prov["from_date"] == EXPLICIT

    def test_inferred_never_clobbers_explicit(self):
        acc, prov = merge(SlotSet(), delta(window=TimeWindow(T1, T2)))
        sneaky = delta(provenance=INFERRED, window=TimeWindow(parse_ts("2020-01-01"), T2))
        out, prov = merge(acc, sneaky, prov)
        assert out.window.from_date == T1

    def test_binding_replaces_direct_and_back(self):
        acc, prov = merge(
            SlotSet(), delta(signature_type=SignatureType.IP, signature_value="1.2.3.4")
        )
        bound = SlotDelta(
            slots=SlotSet(bindings={"signature_value": StepOutputRef(1, "list_ip")}),
            provenance={"signature_value": BOUND},
        )
        out, prov = merge(acc, bound, prov)
        assert out.signature_value is None
        assert out.bindings["signature_value"] == StepOutputRef(1, "list_ip")
        direct = delta(signature_value="5.6.7.8")
        out, prov = merge(out, direct, prov)
        assert out.signature_value == "5.6.7.8" and not out.bindings

    def test_last_write_wins_over_sequences(self):
        rng = random.Random(99)
        kinds = [None, SignatureType.IP, SignatureType.URL]
        acc, prov = SlotSet(), {}
        last_quantity = None
        for _ in range(200):
            q = rng.randint(1, 50)
            d = delta(quantity=q)
            acc, prov = merge(acc, d, prov)
            last_quantity = q
        assert acc.quantity == last_quantity


class TestRequiredSlots:
    def test_block_requires_signature_pair(self):
        assert required_slots(ActionIntent.BLOCK) == {"signature_type", "signature_value"}
        assert required_slots(ActionIntent.UNBLOCK) == {"signature_type", "signature_value"}

    def test_status_requires_signature_pair(self):
        assert required_slots(ActionIntent.STATUS) == {"signature_type", "signature_value"}

    def test_search_with_window_only_is_satisfied(self):
        slots = SlotSet(intent=ActionIntent.SEARCH, window=TimeWindow(T1, T2))
        assert missing_slots(ActionIntent.SEARCH, slots) == []

    def test_bound_value_counts_as_present(self):
        slots = SlotSet(
            intent=ActionIntent.BLOCK,
            signature_type=SignatureType.IP,
            bindings={"signature_value": StepOutputRef(1, "list_ip")},
        )
        assert missing_slots(ActionIntent.BLOCK, slots) == []

    def test_exhaustive_lattice(self):
        """Clarification fires iff a required slot is absent, across all 4 x 2^6 cases."""
        value_for = {
            SignatureType.IP: "1.2.3.4",
            None: "1.2.3.4",
        }
        cases = 0
        for intent in ActionIntent:
            for bits in itertools.product([False, True], repeat=6):
                has_type, has_value, has_from, has_to, has_qty, has_binding = bits
                if has_value and has_binding:
                    continue  # invalid by construction: a slot is direct xor bound
                slots = SlotSet(
                    intent=intent,
                    signature_type=SignatureType.IP if has_type else None,
                    signature_value=value_for[SignatureType.IP if has_type else None] if has_value else None,
                    window=TimeWindow(T1 if has_from else None, T2 if has_to else None),
                    quantity=7 if has_qty else None,
                    bindings={"signature_value": StepOutputRef(1, "list_ip")} if has_binding else {},
                )
                absent = missing_slots(intent, slots)
                pair_ok = (has_type or False) and (has_value or has_binding)
                if intent in (ActionIntent.STATUS, ActionIntent.BLOCK, ActionIntent.UNBLOCK):
                    expect_clarify = not (has_type and (has_value or has_binding))
                    expected_names = [
                        n
                        for n in ("signature_type", "signature_value")
                        if (n == "signature_type" and not has_type)
                        or (n == "signature_value" and not (has_value or has_binding))
                    ]
                    assert absent == expected_names
                else:
                    satisfied = pair_ok or has_from or has_to or has_qty
                    expect_clarify = not satisfied
                assert bool(absent) == expect_clarify, (intent, bits, absent)
                cases += 1
        assert cases == 4 * (2**6) - 4 * (2**4)  # minus the direct+bound invalid combos


class TestClassify:
    def test_irrelevant_passthrough(self):
        engine, _, _ = make_engine()
        state = new_state("s", CLOCK)
        intent, answer = engine.classify(state, "Where is the capital of Finland?")
        assert intent is GeneralIntent.IRRELEVANT
        assert answer

    def test_cybersecurity_passthrough(self):
        engine, _, _ = make_engine()
        state = new_state("s", CLOCK)
        intent, answer = engine.classify(state, "What is Phishing?")
        assert intent is GeneralIntent.CYBERSECURITY
        assert "phishing" in answer.lower()

    def test_action_no_passthrough(self):
        engine, _, _ = make_engine()
        state = new_state("s", CLOCK)
        intent, answer = engine.classify(state, "Block the hash signature " + "530ac4" + "a" * 58)
        assert intent is GeneralIntent.ACTION and answer is None

    def test_unlabeled_falls_back_to_cybersecurity(self):
        scripted = ScriptedBackend()
        engine, _, _ = make_engine(backend=scripted)
        state = new_state("s", CLOCK)
        from sentinel.llm import CompletionRequest, TemplateSet
        from sentinel.model import ChatMessage

        now = CLOCK.now()
        req = CompletionRequest(
            messages=[TemplateSet().render_intent(now), ChatMessage(Role.USER, "hm", now)],
            temperature=0.0,
            sample_count=1,
        )
        scripted.record(req, ["no label here at all"])
        intent, answer = engine.classify(state, "hm")
        assert intent is GeneralIntent.CYBERSECURITY
        assert answer == "no label here at all"


class TestPlan:
    def test_hybrid_block_today(self):
        engine, _, _ = make_engine()
        state = new_state("s", CLOCK)
        steps = engine.plan(state, "Block all IP addresses reported today.", CLOCK.now())
        assert [s.slots.intent for s in steps] == [ActionIntent.SEARCH, ActionIntent.BLOCK]
        assert steps[0].slots.window.from_date == parse_ts("2023-01-02T00:00:00Z")
        assert steps[0].slots.window.to_date == CLOCK.now()
        assert steps[1].slots.bindings["signature_value"] == StepOutputRef(1, "list_ip")

    def test_guarded_block(self):
        engine, _, _ = make_engine()
        state = new_state("s", CLOCK)
        steps = engine.plan(state, "Block 130.231.4.98 if it is malicious.", CLOCK.now())
        assert [s.slots.intent for s in steps] == [ActionIntent.STATUS, ActionIntent.BLOCK]
        assert steps[1].guard == StepOutputRef(1, "found")
        assert steps[0].slots.signature_value == "130.231.4.98"

    def test_url_status(self):
        engine, _, _ = make_engine()
        state = new_state("s", CLOCK)
        steps = engine.plan(state, "Is this URL John.Doe.com secure?", CLOCK.now())
        assert len(steps) == 1
        assert steps[0].slots.intent is ActionIntent.STATUS
        assert steps[0].slots.signature_type is SignatureType.URL
        assert steps[0].slots.signature_value == "http://john.doe.com"

    def test_unparseable_plan_raises(self):
        scripted = ScriptedBackend()
        engine, _, _ = make_engine(backend=scripted)
        state = new_state("s", CLOCK)
        from sentinel.llm import CompletionRequest, TemplateSet
        from sentinel.model import ChatMessage

        now = CLOCK.now()
        req = CompletionRequest(
            messages=[TemplateSet().render_planner(now), ChatMessage(Role.USER, "do the thing", now)],
            temperature=0.0,
            sample_count=1,
        )
        scripted.record(req, ["I would rather chat about this."])
        with pytest.raises(PlanParseFailure):
            engine.plan(state, "do the thing", now)


class TestExtractSlots:
    def test_last_24_hours_inferred(self):
        engine, _, _ = make_engine()
        d = engine.extract_slots(
            "Give the latest IP addresses reported in the last 24 hours.",
            ActionIntent.SEARCH,
            CLOCK.now(),
        )
        assert d.slots.window.from_date == parse_ts("2023-01-01T00:00:00Z")
        assert d.slots.window.to_date == parse_ts("2023-01-02T00:00:00Z")
        assert d.provenance["from_date"] == INFERRED
        assert d.provenance["to_date"] == INFERRED
        assert d.slots.signature_type is SignatureType.IP

    def test_subnet_explicit(self):
        engine, _, _ = make_engine()
        d = engine.extract_slots(
            "Block the IP addresses within subnet 54.12.0.0/16",
            ActionIntent.BLOCK,
            CLOCK.now(),
        )
        assert d.slots.signature_type is SignatureType.SUBNET
        assert d.slots.signature_value == "54.12.0.0/16"
        assert d.provenance["signature_value"] == EXPLICIT

    def test_absence_propagates(self):
        engine, _, _ = make_engine()
        d = engine.extract_slots("Show the statistics", ActionIntent.SEARCH, CLOCK.now())
        assert d.slots.window.is_open
        assert d.slots.quantity is None


class TestNextTurn:
    def test_fresh_irrelevant(self):
        engine, _, _ = make_engine()
        state = new_state("s", CLOCK)
        state, turn = engine.next_turn(state, "How is the weather")
        assert turn.kind is TurnKind.ANSWER
        assert state.awaiting is Awaiting.NONE
        assert [m.role for m in state.history] == [Role.SYSTEM, Role.USER, Role.ASSISTANT]

    def test_block_clarification_then_fill(self):
        engine, _, siem = make_engine()
        state = new_state("s", CLOCK)
        state, turn = engine.next_turn(state, "Block something")
        assert turn.kind is TurnKind.CLARIFICATION
        assert turn.missing_slots == ["signature_type", "signature_value"]
        assert state.awaiting is Awaiting.MISSING_SLOTS
        state, turn = engine.next_turn(state, "the IP 130.231.4.98")
        assert turn.kind is TurnKind.CONFIRMATION
        assert state.awaiting is Awaiting.CONFIRMATION
        assert siem.call_log == []

    def test_confirmation_affirm_executes(self):
        engine, _, siem = make_engine(records=[record("10.0.0.1")])
        state = new_state("s", CLOCK)
        state, turn = engine.next_turn(state, "Block the IP 10.0.0.1")
        assert turn.kind is TurnKind.CONFIRMATION
        state, turn = engine.next_turn(state, "yes")
        assert turn.kind is TurnKind.RESULT
        assert len(siem.call_log) == 2
        assert state.awaiting is Awaiting.NONE

    def test_confirmation_deny_is_safe(self):
        engine, _, siem = make_engine()
        state = new_state("s", CLOCK)
        state, _ = engine.next_turn(state, "Block the IP 10.0.0.1")
        state, turn = engine.next_turn(state, "no")
        assert turn.kind is TurnKind.ANSWER
        assert siem.call_log == []
        assert state.pending_plan is None

    def test_confirmation_other_reasks(self):
        engine, _, siem = make_engine()
        state = new_state("s", CLOCK)
        state, _ = engine.next_turn(state, "Block the IP 10.0.0.1")
        state, turn = engine.next_turn(state, "what will that do?")
        assert turn.kind is TurnKind.CONFIRMATION
        assert state.awaiting is Awaiting.CONFIRMATION
        assert siem.call_log == []

    def test_query_executes_without_confirmation(self):
        engine, _, siem = make_engine(records=[record("10.0.0.1")])
        state = new_state("s", CLOCK)
        state, turn = engine.next_turn(state, "Give the latest IP addresses reported in the last 24 hours.")
        assert turn.kind is TurnKind.RESULT
        assert turn.payload["report"]["steps"][0]["payload"]["total_matched"] == 1
        assert siem.call_log == []

    def test_auto_confirm_mode(self):
        engine, _, siem = make_engine(records=[record("10.0.0.1")], auto_confirm=True)
        state = new_state("s", CLOCK)
        state, turn = engine.next_turn(state, "Block the IP 10.0.0.1")
        assert turn.kind is TurnKind.RESULT
        assert len(siem.call_log) == 2

    def test_programmatic_confirm(self):
        engine, _, siem = make_engine()
        state = new_state("s", CLOCK)
        state, _ = engine.next_turn(state, "Block the IP 10.0.0.1")
        state, turn = engine.confirm(state, affirm=False)
        assert turn.kind is TurnKind.ANSWER and siem.call_log == []

    def test_unsound_binding_rejected_before_execution(self):
        import json as json_mod

        from sentinel.llm import CompletionRequest, TemplateSet
        from sentinel.model import ChatMessage

        scripted = ScriptedBackend()
        engine, _, siem = make_engine(backend=scripted)
        now = CLOCK.now()
        templates = TemplateSet()
        utterance = "Block everything from the earlier search"
        classify_req = CompletionRequest(
            messages=[templates.render_intent(now), ChatMessage(Role.USER, utterance, now)],
            temperature=0.0,
            sample_count=1,
        )
        scripted.record(classify_req, ["**action** on it"])
        plan_req = CompletionRequest(
            messages=[templates.render_planner(now), ChatMessage(Role.USER, utterance, now)],
            temperature=0.0,
            sample_count=1,
        )
        # step 2 binds an output of step 1, but step 1 is an action and publishes nothing
        bad_plan = [
            {"step": 1, "intent": "block", "description": "Block the ip 1.2.3.4 on the SIEM."},
            {"step": 2, "intent": "block", "description": "Block the ip addresses in $1.list_ip on the SIEM."},
        ]
        scripted.record(plan_req, [json_mod.dumps(bad_plan)])
        for step in bad_plan:
            extract_req = CompletionRequest(
                messages=[
                    templates.render_extractor(now, "block", ""),
                    ChatMessage(Role.USER, step["description"], now),
                ],
                temperature=0.7,
                sample_count=3,
            )
            slots = {"intent": "block", "signature_type": "ip"}
            if "$1" in step["description"]:
                slots["signature_value"] = "$1.list_ip"
            else:
                slots["signature_value"] = "1.2.3.4"
            scripted.record(extract_req, [json_mod.dumps(slots, sort_keys=True)] * 3)

        state = new_state("bind", CLOCK)
        state, turn = engine.next_turn(state, utterance)
        assert turn.kind is TurnKind.CLARIFICATION
        assert siem.call_log == []
        assert state.pending_plan is None

    def test_state_doc_round_trip(self):
        engine, _, _ = make_engine()
        state = new_state("s", CLOCK)
        state, _ = engine.next_turn(state, "Block the IP 10.0.0.1")
        from sentinel.dialogue import DialogState

        revived = DialogState.from_doc(state.to_doc(), CLOCK)
        assert revived.awaiting is Awaiting.CONFIRMATION
        assert revived.pending_plan is not None
        state2, turn = engine.next_turn(revived, "no")
        assert turn.kind is TurnKind.ANSWER
