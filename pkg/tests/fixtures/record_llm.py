"""Regenerates the scripted LLM fixtures under tests/fixtures/llm/.

Each utterance runs through a fresh session with the clock pinned, with
every gateway request/response recorded by digest. Run after changing the
templates, the rule backend, or the request canonicalization:

    python3 tests/fixtures/record_llm.py
"""

import sys
from pathlib import Path

HERE = Path(__file__).parent

sys.path.insert(0, str(HERE.parent))  # for direct execution

from sentinel.clock import FixedClock
from sentinel.dialogue import DialogueEngine, new_state
from sentinel.executor import Executor
from sentinel.llm import Gateway, RecordingBackend, RuleBasedBackend, ScriptedBackend
from sentinel.siem import MockSiem
from sentinel.store import IocStore

UTTERANCES = [
    "Where is the capital of Finland?",
    "How is the weather",
    "What is Phishing?",
    "How do banks protect customer data from cyber threats?",
    "Give the latest IP addresses reported in the last 24 hours.",
    "Show the statistics of the latest IoCs in the last 7 days.",
    "Is this email address malicious: John.Doe@testcompany.com",
    "Is this URL John.Doe.com secure?",
    "Show me all attacks targeting TCP port 9000.",
    "How many attacks reported within the last 24 hours targeting TCP port 23?",
    "Block the IP addresses within subnet 54.12.0.0/16",
    "Block the hash signature 530ac4e9c1fda1736a4a05b0b0d2b2d36f25e5e3d9c6a00be5ac05ba81516e2b",
    "Block 130.231.4.98 if it is malicious.",
    "Block all IP addresses reported today.",
]

CLOCK_AT = "2023-01-02T00:00:00Z"


# raw utterances whose slot extraction the time-inference suite replays directly
DIRECT_EXTRACTIONS = [
    ("Give the latest IP addresses reported in the last 24 hours.", "search"),
    ("Block all IP addresses reported today.", "search"),
]


def record(out_dir: Path) -> int:
    from sentinel.model import ActionIntent

    scripted = ScriptedBackend(out_dir)
    gateway = Gateway(RecordingBackend(RuleBasedBackend(), scripted))
    engine = DialogueEngine(gateway, Executor(IocStore(), MockSiem()))
    clock = FixedClock(CLOCK_AT)
    for i, utterance in enumerate(UTTERANCES):
        state = new_state(f"record-{i}", clock)
        engine.next_turn(state, utterance)
    # clarification flow: underspecified action, then the missing details
    state = new_state("record-clarify", clock)
    state, _ = engine.next_turn(state, "Block something")
    engine.next_turn(state, "the IP 130.231.4.98")
    for utterance, intent in DIRECT_EXTRACTIONS:
        engine.extract_slots(utterance, ActionIntent(intent), clock.now())
    return len(scripted)


if __name__ == "__main__":
    out = HERE / "llm"
    out.mkdir(parents=True, exist_ok=True)
    for stale in out.glob("*.json"):
        stale.unlink()
    count = record(out)
    print(f"{count} fixtures in {out}")
