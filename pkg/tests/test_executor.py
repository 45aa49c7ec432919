"""Plan compilation, guards, execution, CDB rendering, and summary fidelity."""

import re
import string
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sentinel.executor import (
    EmptyBinding,
    Executor,
    GuardUnresolvable,
    compile_action,
    compile_query,
    describe_filter,
    evaluate_guard,
    summarize_query,
    summarize_report,
)
from sentinel.model import (
    ActionIntent,
    IocRecord,
    PlanStep,
    SignatureType,
    SlotSet,
    StepOutputRef,
    TimeWindow,
    canonical_json,
    parse_signature,
    parse_ts,
)
from sentinel.siem import (
    CommandKind,
    InvalidKey,
    MockSiem,
    SiemCommand,
    parse_cdb,
    render_cdb,
)
from sentinel.store import IocStore

UTC = timezone.utc
T1 = parse_ts("2023-01-01T00:00:00Z")
T2 = parse_ts("2023-01-02T00:00:00Z")


def search_step(ordinal=1, **kwargs):
    slots = SlotSet(intent=ActionIntent.SEARCH, **kwargs)
    return PlanStep(ordinal=ordinal, description="Search the threat intelligence database.", slots=slots)


def block_step(ordinal, value=None, sig_type=None, bindings=None, guard=None):
    slots = SlotSet(
        intent=ActionIntent.BLOCK,
        signature_type=sig_type,
        signature_value=value,
        bindings=bindings or {},
    )
    return PlanStep(ordinal=ordinal, description="Block on the SIEM.", slots=slots, guard=guard)


def seeded_store(values, last="2023-01-02T00:00:00Z"):
    store = IocStore()
    recs = [
        IocRecord.build(parse_signature(v), "anomali", first_reported=T1, last_reported=parse_ts(last))
        for v in values
    ]
    store.upsert_records(recs)
    return store


class TestCompileQuery:
    def test_direct_mapping(self):
        slots = SlotSet(intent=ActionIntent.SEARCH, signature_type=SignatureType.IP, window=TimeWindow(T1, T2))
        flt = compile_query(slots)
        assert flt.index_type is SignatureType.IP
        assert flt.signature is None
        assert flt.window == TimeWindow(T1, T2)

    def test_port_value_becomes_signature(self):
        slots = SlotSet(
            intent=ActionIntent.SEARCH,
            signature_type=SignatureType.PORT,
            signature_value="23",
            window=TimeWindow(T1, T2),
        )
        flt = compile_query(slots)
        assert flt.signature == parse_signature("23", SignatureType.PORT)
        assert flt.index_type is None

    def test_quantity_becomes_limit(self):
        assert compile_query(SlotSet(intent=ActionIntent.SEARCH, quantity=10)).limit == 10


class TestCompileAction:
    def test_block_ip_pair(self):
        step = block_step(1, value="130.231.4.98", sig_type=SignatureType.IP)
        cmds = compile_action(step, {})
        assert [c.kind for c in cmds] == [CommandKind.CDB_ADD, CommandKind.AR_BLOCK]
        assert cmds[0].list_name == "sentinel-blacklist"
        assert cmds[0].key == "130.231.4.98"
        assert cmds[1].target == "130.231.4.98"

    def test_block_hash_cdb_only(self):
        step = block_step(1, value="a" * 64, sig_type=SignatureType.HASH)
        cmds = compile_action(step, {})
        assert [c.kind for c in cmds] == [CommandKind.CDB_ADD]

    def test_unblock_inverse_pair(self):
        slots = SlotSet(intent=ActionIntent.UNBLOCK, signature_type=SignatureType.IP, signature_value="1.2.3.4")
        step = PlanStep(ordinal=1, description="Unblock.", slots=slots)
        cmds = compile_action(step, {})
        assert [c.kind for c in cmds] == [CommandKind.CDB_REMOVE, CommandKind.AR_UNBLOCK]

    def test_bound_list_fans_out_deduplicated(self):
        step = block_step(2, sig_type=SignatureType.IP, bindings={"signature_value": StepOutputRef(1, "list_ip")})
        cmds = compile_action(step, {"signature_value": ["1.1.1.1", "2.2.2.2", "1.1.1.1"]})
        assert len(cmds) == 4  # two IPs, one pair each
        assert len(set(cmds)) == 4

    def test_empty_binding(self):
        step = block_step(2, sig_type=SignatureType.IP, bindings={"signature_value": StepOutputRef(1, "list_ip")})
        with pytest.raises(EmptyBinding):
            compile_action(step, {"signature_value": []})


class TestGuards:
    def _outcomes(self, status="ok"):
        from sentinel.executor import StepOutcome

        return [StepOutcome(1, ActionIntent.STATUS, status)]

    def test_found_true_passes(self):
        guard = StepOutputRef(1, "found")
        assert evaluate_guard(guard, {1: {"found": True}}, self._outcomes()) is True

    def test_found_false_blocks(self):
        guard = StepOutputRef(1, "found")
        assert evaluate_guard(guard, {1: {"found": False}}, self._outcomes()) is False

    def test_failed_prior_is_unresolvable(self):
        guard = StepOutputRef(1, "found")
        with pytest.raises(GuardUnresolvable):
            evaluate_guard(guard, {}, self._outcomes(status="failed"))


class TestExecute:
    def test_search_then_block_bound_ips(self):
        store = seeded_store(["10.0.0.1", "10.0.0.2"])
        siem = MockSiem()
        plan = [
            search_step(1, signature_type=SignatureType.IP, window=TimeWindow(T1, T2)),
            block_step(2, sig_type=SignatureType.IP, bindings={"signature_value": StepOutputRef(1, "list_ip")}),
        ]
        report = Executor(store, siem).execute(plan)
        assert [s.status for s in report.steps] == ["ok", "ok"]
        assert len(report.commands_issued) == 4
        assert len(siem.call_log) == 4
        assert siem.blocked == {"10.0.0.1", "10.0.0.2"}

    def test_status_only_plan_issues_nothing(self):
        store = seeded_store(["10.0.0.1"])
        siem = MockSiem()
        slots = SlotSet(intent=ActionIntent.STATUS, signature_type=SignatureType.IP, signature_value="10.0.0.1")
        plan = [PlanStep(ordinal=1, description="Check.", slots=slots)]
        report = Executor(store, siem).execute(plan)
        assert report.steps[0].status == "ok"
        assert report.commands_issued == [] and siem.call_log == []

    def test_guard_false_skips_block(self):
        store = seeded_store(["10.0.0.1"])
        siem = MockSiem()
        slots = SlotSet(intent=ActionIntent.STATUS, signature_type=SignatureType.IP, signature_value="9.9.9.9")
        plan = [
            PlanStep(ordinal=1, description="Check.", slots=slots),
            block_step(2, value="9.9.9.9", sig_type=SignatureType.IP, guard=StepOutputRef(1, "found")),
        ]
        report = Executor(store, siem).execute(plan)
        assert report.steps[1].status == "skipped"
        assert "guard" in report.steps[1].reason
        assert siem.call_log == []

    def test_siem_down_fails_step_and_skips_rest(self):
        store = seeded_store(["10.0.0.1"])
        siem = MockSiem()
        siem.down = True
        plan = [
            block_step(1, value="1.2.3.4", sig_type=SignatureType.IP),
            block_step(2, value="5.6.7.8", sig_type=SignatureType.IP),
        ]
        report = Executor(store, siem).execute(plan)
        assert report.steps[0].status == "failed"
        assert report.steps[1].status == "skipped"
        assert report.commands_issued == []

    def test_report_conservation(self):
        store = seeded_store(["10.0.0.1"])
        plan = [
            search_step(1, signature_type=SignatureType.IP),
            block_step(2, sig_type=SignatureType.IP, bindings={"signature_value": StepOutputRef(1, "list_ip")}),
        ]
        report = Executor(store, MockSiem()).execute(plan)
        assert sorted(s.ordinal for s in report.steps) == [1, 2]
        assert all(s.status in ("ok", "skipped", "failed") for s in report.steps)

    def test_stats_flavored_search(self):
        store = seeded_store(["10.0.0.1", "10.0.0.2"])
        step = PlanStep(
            ordinal=1,
            description="Search the threat intelligence database. Report the statistics of the matching records.",
            slots=SlotSet(intent=ActionIntent.SEARCH, window=TimeWindow(T1, T2)),
        )
        report = Executor(store, MockSiem()).execute([step])
        assert report.steps[0].payload["stats"]["total"] == 2


class TestCdb:
    def test_single_entry(self):
        assert render_cdb({"130.231.4.98": "sentinel"}) == "130.231.4.98:sentinel\n"

    def test_empty(self):
        assert render_cdb({}) == ""

    def test_sorted_regardless_of_insertion(self):
        a = render_cdb({"b.example": "x", "a.example": "y"})
        b = render_cdb({"a.example": "y", "b.example": "x"})
        assert a == b == "a.example:y\nb.example:x\n"

    def test_invalid_key(self):
        with pytest.raises(InvalidKey):
            render_cdb({"bad:key": "v"})
        with pytest.raises(InvalidKey):
            render_cdb({"bad\nkey": "v"})
        with pytest.raises(InvalidKey):
            render_cdb({"": "v"})

    @given(
        st.dictionaries(
            st.text(alphabet=string.ascii_lowercase + string.digits + ".-@/", min_size=1, max_size=24),
            st.text(alphabet=string.ascii_letters + string.digits + ".:-", max_size=12),
            max_size=30,
        )
    )
    @settings(max_examples=150)
    def test_round_trip_identity(self, entries):
        rendered = render_cdb(entries)
        assert parse_cdb(rendered) == entries
        assert render_cdb(parse_cdb(rendered)) == rendered


class TestSummaries:
    def test_query_summary_numbers_from_payload(self):
        store = seeded_store(["10.0.0.1", "10.0.0.2"])
        flt = compile_query(SlotSet(intent=ActionIntent.SEARCH, signature_type=SignatureType.IP))
        result = store.query(flt)
        payload = {
            "total_matched": result.total_matched,
            "shown": len(result.records),
            "truncated": result.truncated,
            "records": [r.to_doc() for r in result.records],
        }
        text = summarize_query(result, describe_filter(flt))
        blob = canonical_json(payload)
        for numeral in re.findall(r"\d+", text):
            assert numeral in blob

    def test_empty_query_mentions_zero_and_filter(self):
        store = IocStore()
        flt = compile_query(SlotSet(intent=ActionIntent.SEARCH, signature_type=SignatureType.IP))
        text = summarize_query(store.query(flt), describe_filter(flt))
        assert "0" in text and "type=ip" in text

    def test_report_summary_names_skip_reason(self):
        store = seeded_store(["10.0.0.1"])
        slots = SlotSet(intent=ActionIntent.STATUS, signature_type=SignatureType.IP, signature_value="9.9.9.9")
        plan = [
            PlanStep(ordinal=1, description="Check.", slots=slots),
            block_step(2, value="9.9.9.9", sig_type=SignatureType.IP, guard=StepOutputRef(1, "found")),
        ]
        report = Executor(store, MockSiem()).execute(plan)
        text = summarize_report(report)
        assert "skipped" in text and "guard" in text

    def test_report_summary_numbers_from_payload(self):
        store = seeded_store(["10.0.0.1", "10.0.0.2"])
        plan = [
            search_step(1, signature_type=SignatureType.IP, window=TimeWindow(T1, T2)),
            block_step(2, sig_type=SignatureType.IP, bindings={"signature_value": StepOutputRef(1, "list_ip")}),
        ]
        report = Executor(store, MockSiem()).execute(plan)
        text = summarize_report(report)
        blob = canonical_json(report.to_doc())
        for numeral in re.findall(r"\d+", text):
            assert numeral in blob
