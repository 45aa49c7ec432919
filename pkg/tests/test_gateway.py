"""Label protocol, voting, templates, and backend contracts."""

from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sentinel.model import ActionIntent, ChatMessage, GeneralIntent, Role, SignatureType, SlotSet
from sentinel.llm import (
    CompletionRequest,
    FixtureMiss,
    Gateway,
    RuleBasedBackend,
    ScriptedBackend,
    TemplateError,
    TemplateSet,
    UnlabeledResponse,
    parse_label,
    render_intent_template,
    vote,
)

NOW = datetime(2023, 1, 2, tzinfo=timezone.utc)


def make_request(user_text="hello", system_text="sys", sample_count=1, temperature=0.0):
    return CompletionRequest(
        messages=[ChatMessage(Role.SYSTEM, system_text, NOW), ChatMessage(Role.USER, user_text, NOW)],
        temperature=temperature,
        sample_count=sample_count,
    )


class TestParseLabel:
    def test_bold_query(self):
        got = parse_label("**query** Here are the latest...")
        assert got.label is GeneralIntent.QUERY
        assert got.body == "Here are the latest..."

    def test_uppercase_with_colon(self):
        got = parse_label("IRRELEVANT: I can only help with security.")
        assert got.label is GeneralIntent.IRRELEVANT
        assert got.body == "I can only help with security."

    def test_unlabeled(self):
        with pytest.raises(UnlabeledResponse):
            parse_label("Sure, here you go")
        with pytest.raises(UnlabeledResponse):
            parse_label("")

    @given(
        label=st.sampled_from(list(GeneralIntent)),
        deco=st.sampled_from(["", "*", "**", "_"]),
        tail=st.sampled_from(["", ":", "."]),
        lead=st.sampled_from(["", " ", "\n", "  "]),
        upper=st.booleans(),
        body=st.text(min_size=1, max_size=40).filter(lambda s: s.strip() and not s[0].isspace()),
    )
    @settings(max_examples=200)
    def test_round_trip_identity(self, label, deco, tail, lead, upper, body):
        token = label.value.upper() if upper else label.value
        completion = f"{lead}{deco}{token}{deco}{tail} {body}"
        got = parse_label(completion)
        assert got.label is label
        assert got.body == body


class TestVote:
    def a(self):
        return SlotSet(intent=ActionIntent.SEARCH, signature_type=SignatureType.IP)

    def b(self):
        return SlotSet(intent=ActionIntent.BLOCK, signature_type=SignatureType.URL)

    def test_unanimous(self):
        assert vote([self.a(), self.a(), self.a()]).canonical() == self.a().canonical()

    def test_majority(self):
        assert vote([self.a(), self.a(), self.b()]).canonical() == self.a().canonical()

    def test_tie_break_lexicographic(self):
        first, second = sorted([self.a(), self.b()], key=lambda s: s.canonical())
        for order in ([first, second], [second, first]):
            assert vote(order).canonical() == first.canonical()

    @given(st.data())
    @settings(max_examples=100)
    def test_permutation_invariant(self, data):
        pool = [
            SlotSet(intent=ActionIntent.SEARCH),
            SlotSet(intent=ActionIntent.BLOCK),
            SlotSet(intent=ActionIntent.STATUS, signature_type=SignatureType.IP, signature_value="1.2.3.4"),
        ]
        picks = data.draw(st.lists(st.sampled_from(pool), min_size=1, max_size=7))
        shuffled = data.draw(st.permutations(picks))
        assert vote(list(shuffled)).canonical() == vote(picks).canonical()


class TestTemplates:
    def test_intent_template_verbatim_opening(self):
        msg = render_intent_template(NOW)
        assert msg.role is Role.SYSTEM
        assert msg.content.startswith(
            "You are a cyber security assistant AI called Cyber Sentinel, designed to answer "
            "user questions related to cybersecurity and computer security."
        )

    def test_now_embedded(self):
        msg = render_intent_template(NOW)
        assert "2023-01-02T00:00:00Z" in msg.content

    def test_purity(self):
        assert render_intent_template(NOW).content == render_intent_template(NOW).content

    def test_missing_binding_fails(self):
        templates = TemplateSet()
        with pytest.raises(TemplateError):
            templates.get("slot-extractor").render(now="x")

    def test_override_dir(self, tmp_path):
        (tmp_path / "intent_classifier.txt").write_text("custom body {now}\n", encoding="utf-8")
        templates = TemplateSet(override_dir=tmp_path)
        assert templates.render_intent(NOW).content.startswith("custom body")
        # untouched templates fall back to the built-ins
        assert "planning stage" in templates.get("step-planner").body


class TestScriptedBackend:
    def test_replay_exact(self, tmp_path):
        backend = ScriptedBackend(tmp_path)
        req = make_request("hi")
        backend.record(req, ["recorded reply"])
        assert backend.complete(req) == ["recorded reply"]

    def test_miss(self, tmp_path):
        backend = ScriptedBackend(tmp_path)
        with pytest.raises(FixtureMiss):
            backend.complete(make_request("never recorded"))

    def test_pure_across_restarts(self, tmp_path):
        first = ScriptedBackend(tmp_path)
        req = make_request("persist me")
        first.record(req, ["alpha", "beta"])
        reloaded = ScriptedBackend(tmp_path)
        assert reloaded.complete(req) == first.complete(req)

    def test_sample_count_contract(self, tmp_path):
        backend = ScriptedBackend(tmp_path)
        req = make_request("multi", sample_count=3, temperature=0.7)
        backend.record(req, ["one"])
        assert backend.complete(req) == ["one", "one", "one"]


class TestGateway:
    def test_sample_count_enforced(self):
        gateway = Gateway(RuleBasedBackend())
        req = make_request("Block 1.2.3.4", sample_count=3, temperature=0.7)
        assert len(gateway.complete(req)) == 3

    def test_observer_sees_traffic(self):
        events = []
        gateway = Gateway(RuleBasedBackend(), observer=lambda kind, doc: events.append(kind))
        gateway.complete(make_request("What is phishing?"))
        assert events == ["llm_request", "llm_response"]

    def test_request_validation(self):
        with pytest.raises(ValueError):
            CompletionRequest(messages=[])
        with pytest.raises(ValueError):
            CompletionRequest(messages=[ChatMessage(Role.USER, "no system first", NOW)])
        with pytest.raises(ValueError):
            make_request(temperature=3.0)
