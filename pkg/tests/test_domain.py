import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auditmas.baselines import run_variant
from auditmas.config import ScenarioConfig
from auditmas.domain import (
    BudgetError, Contract, Event, EventKind, EventLog, Message, Performative, ResourceBudget,
    ToolDescriptor, apply_event, canonical_performative, initial_state, read_log, replay,
)
from auditmas.sim.corpus import CorpusSpec


def state(llm=1000.0):
    contracts = [Contract("c1", 0.5), Contract("c2", 0.3, frozenset({"c1"}))]
    return initial_state(contracts, [ToolDescriptor("static-1", "static")], ResourceBudget(llm_budget=llm))


def detected(vid="c2/reentrancy", contract="c2", severity="high"):
    return Event(EventKind.VULN_DETECTED, {"contract": contract, "vulnerability": {
        "id": vid, "severity": severity, "detecting_tool": "static-1", "confidence": 0.9}}, 1.0)


def test_vuln_detected_inserts_detected_vulnerability():
    s = apply_event(state(), detected())
    v = s.vulnerabilities["c2/reentrancy"]
    assert (v.contract, v.status, v.severity) == ("c2", "detected", "high")


def test_unknown_timeout_is_rejected_with_error_record():
    s0 = state()
    errors = []
    s1 = apply_event(s0, Event(EventKind.TIMEOUT, {"protocol_id": "pn-404"}, 3.0), errors)
    assert s1 == s0
    assert errors and errors[0]["kind"] == "TIMEOUT"


@pytest.mark.parametrize("event", [
    Event(EventKind.VULN_DETECTED, {"contract": "c9", "vulnerability": {"id": "x", "severity": "low"}}, 0.0),
    Event(EventKind.VULN_STATUS, {"vulnerability": "nope", "status": "confirmed"}, 0.0),
    Event(EventKind.TOOL_FAILED, {"tool": "ghost-1", "error": "crash"}, 0.0),
    Event(EventKind.RISK_CHANGED, {"contract": "c1", "delta": 2.0}, 0.0),
    Event(EventKind.RESOURCE_ALLOCATED, {"agent": "a", "resource_type": "llm", "amount": 5000}, 0.0),
    Event(EventKind.REPAIR_NEEDED, {"artifact": "a1"}, 0.0),
])
def test_invalid_events_leave_state_unchanged(event):
    s0 = state()
    errors = []
    assert apply_event(s0, event, errors) == s0
    assert len(errors) == 1


def test_status_cannot_regress():
    s = apply_event(state(), detected())
    s = apply_event(s, Event(EventKind.VULN_STATUS, {"vulnerability": "c2/reentrancy", "status": "confirmed"}, 2.0))
    errors = []
    s2 = apply_event(s, Event(EventKind.VULN_STATUS, {"vulnerability": "c2/reentrancy", "status": "detected"}, 3.0),
                     errors)
    assert s2.vulnerabilities["c2/reentrancy"].status == "confirmed" and errors


def test_budget_never_negative():
    with pytest.raises(BudgetError):
        ResourceBudget(llm_budget=-1)
    with pytest.raises(BudgetError):
        ResourceBudget(llm_budget=10).debit("llm", 11)
    assert ResourceBudget(llm_budget=10).debit("llm_budget", 10).llm_budget == 0


def test_corpus_dependencies_must_exist():
    with pytest.raises(ValueError):
        initial_state([Contract("c1", 0.1, frozenset({"c2"}))], [], ResourceBudget())
    with pytest.raises(ValueError):
        Contract("c1", 0.1, frozenset({"c1"}))


def test_performative_synonyms():
    assert canonical_performative(Performative.OPEN) is Performative.CFP
    assert canonical_performative(Performative.ALLOCATE) is Performative.AWARD
    assert canonical_performative(Performative.BID) is Performative.BID


def test_log_rejects_time_going_backwards():
    log = EventLog(state())
    log.emit(EventKind.RISK_CHANGED, 5.0, contract="c1", delta=0.1)
    with pytest.raises(ValueError):
        log.emit(EventKind.RISK_CHANGED, 4.0, contract="c1", delta=0.1)


event_kinds = st.sampled_from(["detect", "confirm", "fail", "recover", "alloc", "open", "close", "timeout",
                               "msg", "deliver"])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(event_kinds, st.integers(0, 3), st.integers(1, 400)), max_size=40))
def test_replay_equals_live_state(ops):
    log = EventLog(state())
    seq = 0
    for t, (op, k, amount) in enumerate(ops):
        vid = f"c{1 + k % 2}/v{k}"
        if op == "detect":
            log.emit(EventKind.VULN_DETECTED, t, contract=f"c{1 + k % 2}",
                     vulnerability={"id": vid, "severity": "low"})
        elif op == "confirm":
            log.emit(EventKind.VULN_STATUS, t, vulnerability=vid, status=("confirmed", "repaired", "detected")[k % 3])
        elif op == "fail":
            log.emit(EventKind.TOOL_FAILED, t, tool="static-1", error="crash")
        elif op == "recover":
            log.emit(EventKind.TOOL_RECOVERED, t, tool="static-1")
        elif op == "alloc":
            log.emit(EventKind.RESOURCE_ALLOCATED, t, agent="repair", resource_type="llm", amount=amount)
        elif op == "open":
            log.emit(EventKind.PROTOCOL_OPENED, t, protocol_id=f"p{k}", kind="ContractNet", deadline=t + 10)
        elif op == "close":
            log.emit(EventKind.PROTOCOL_CLOSED, t, protocol_id=f"p{k}", outcome="awarded")
        elif op == "timeout":
            log.emit(EventKind.TIMEOUT, t, protocol_id=f"p{k}")
        elif op == "msg":
            seq += 1
            log.message(Message(Performative.INFORM, "a", "b", {"n": k}, None, t, seq))
        else:
            log.emit(EventKind.MESSAGE_DELIVERED, t, seq=k)
        assert log.state.resources.llm_budget >= 0
    assert replay(read_log(io.StringIO(log.dumps()))) == log.state


def test_replay_of_seeded_run_reconstructs_final_state():
    cfg = ScenarioConfig(corpus=CorpusSpec(n_contracts=5, n_vulns=3))
    res = run_variant(cfg, "FullMAS", 3)
    assert replay(read_log(io.StringIO(res.log_text()))) == res.state
    assert replay(res.records).to_dict() == res.state.to_dict()


def test_replay_needs_initial_state():
    with pytest.raises(ValueError):
        replay([])
