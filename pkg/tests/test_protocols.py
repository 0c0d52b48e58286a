import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auditmas.domain import EventKind, Message, Performative, ResourceBudget
from auditmas.protocols import (
    H_MAX, TIMEOUTS, Bid, FsmState, NoBids, ProtocolKind, ProtocolRegistry, auction_close,
    contract_net_round, contract_net_winner, exceeds_threshold, expire, new_instance,
    plan_negotiation_step, record_bid, resolve_escalation, resource_auction_round, risk_coverage,
)
from oracles import contract_net_argmax

unit = st.integers(0, 100).map(lambda k: k / 100)


@st.composite
def cn_bid_sets(draw):
    n = draw(st.integers(1, 8))
    names = draw(st.lists(st.text("abcdef", min_size=1, max_size=3), min_size=n, max_size=n, unique=True))
    return [Bid(name, draw(unit), draw(unit)) for name in names]


@settings(max_examples=200)
@given(cn_bid_sets())
def test_contract_net_equals_brute_force_argmax(bids):
    assert contract_net_winner(bids) == contract_net_argmax(bids)


def test_contract_net_worked_scores():
    a, b = Bid("a", 0.9, 0.5), Bid("b", 0.6, 1.0)
    assert a.score == pytest.approx(0.78)
    assert b.score == pytest.approx(0.72)
    assert contract_net_winner([b, a]).bidder == "a"
    assert contract_net_winner([b]).bidder == "b"
    with pytest.raises(NoBids):
        contract_net_winner([])


def test_contract_net_round_awards_and_closes():
    cfp = new_instance("cn-1", ProtocolKind.CONTRACT_NET, "executor", ["cmd-1", "cmd-2"], 0.0,
                       content={"task": "t1"})
    cfp = record_bid(cfp, Bid("cmd-2", 0.8, 1.0))
    cfp = record_bid(cfp, Bid("cmd-2", 0.1, 0.1))  # duplicate bidder ignored
    cfp = record_bid(cfp, Bid("cmd-1", 0.8, 1.0))
    inst, msgs = contract_net_round(cfp, now=2.0)
    assert inst.state is FsmState.AWARDED and inst.outcome == "cmd-1"
    assert [(m.performative, m.receiver, m.content["task"]) for m in msgs] == [(Performative.AWARD, "cmd-1", "t1")]
    assert record_bid(inst, Bid("cmd-3", 1.0, 1.0)) is inst
    assert contract_net_round(inst)[1] == []


def test_contract_net_without_bids_expires_to_no_award():
    cfp = new_instance("cn-1", ProtocolKind.CONTRACT_NET, "executor", ["cmd-1"], 0.0)
    assert expire(cfp, 9.99) == (cfp, [])
    inst, out = expire(cfp, 10.0)
    assert inst.state is FsmState.NO_AWARD
    assert out[0].kind is EventKind.TIMEOUT


def test_auction_worked_example():
    ar = Bid("repair", urgency=0.9, benefit=0.8, cost=500)
    ae = Bid("executor", urgency=0.6, benefit=0.7, cost=200)
    assert ar.efficiency == pytest.approx(0.00144, abs=1e-12)
    assert ae.efficiency == pytest.approx(0.00210, abs=1e-12)
    res = resource_auction_round([ar, ae], ResourceBudget(llm_budget=600))
    assert res.allocations == (("executor", 200),)
    assert res.rejected == ("repair",)
    assert res.budget.llm_budget == 400


def test_auction_single_bid_within_budget_granted():
    res = resource_auction_round([Bid("a", urgency=0.1, benefit=0.1, cost=10)], ResourceBudget(llm_budget=10))
    assert res.allocations == (("a", 10),)


def test_auction_insufficient_budget_rejects_all():
    inst = new_instance("ra-1", ProtocolKind.RESOURCE_AUCTION, "coordinator", ["a", "b"], 0.0)
    inst = record_bid(record_bid(inst, Bid("a", cost=50, urgency=1, benefit=1)), Bid("b", cost=60))
    inst, msgs, _ = auction_close(inst, ResourceBudget(llm_budget=10), 1.0)
    assert inst.state is FsmState.ALL_REJECTED
    assert {m.performative for m in msgs} == {Performative.REJECT}


def greedy_oracle(bids, budget):
    """Try every processing order consistent with descending efficiency; all must agree."""
    groups = [list(g) for _, g in itertools.groupby(sorted(bids, key=lambda b: -b.efficiency),
                                                    key=lambda b: b.efficiency)]
    results = set()
    for perm in itertools.product(*[itertools.permutations(g) for g in groups]):
        left, granted = budget, []
        for b in (b for g in perm for b in g):
            if b.cost <= left:
                left -= b.cost
                granted.append(b.bidder)
        results.add(frozenset(granted))
    return results


@st.composite
def auction_sets(draw):
    n = draw(st.integers(1, 5))
    return [Bid(f"b{i}", urgency=draw(unit), benefit=draw(unit), cost=draw(st.integers(1, 100)))
            for i in range(n)], draw(st.integers(0, 300))


@settings(max_examples=200)
@given(auction_sets())
def test_auction_matches_greedy_order_oracle(case):
    bids, budget = case
    res = resource_auction_round(bids, ResourceBudget(llm_budget=budget))
    granted = frozenset(b for b, _ in res.allocations)
    assert granted in greedy_oracle(bids, budget)
    # all-or-nothing and within budget
    cost = {b.bidder: b.cost for b in bids}
    assert all(amount == cost[b] for b, amount in res.allocations)
    assert sum(a for _, a in res.allocations) <= budget
    assert set(res.rejected) | granted == set(cost)


class ScriptedPolicy:
    def __init__(self, delta=0.17, accept=True):
        self.delta, self.accept = delta, accept
        self.counters = 0

    def assess(self, findings):
        return self.delta, {"order": ["c2", "c1", "c3"], "version": 1}

    def respond(self, plan):
        return self.accept

    def counter(self, plan, reply):
        self.counters += 1
        return {**plan, "version": plan["version"] + 1}


def pn(now=0.0):
    return new_instance("pn-1", ProtocolKind.PLAN_NEGOTIATION, "executor", ("executor", "planner"), now)


def inform(conv="pn-1"):
    return Message(Performative.INFORM, "executor", "planner",
                   {"vulnerability": "c2/reentrancy", "confidence": 0.9}, conv)


def test_negotiation_propose_accept():
    policy = ScriptedPolicy()
    inst, msgs = plan_negotiation_step(pn(), inform(), 1.0, policy)
    assert inst.state is FsmState.PROPOSED
    assert msgs[0].performative is Performative.PROPOSE and msgs[0].content["plan"]["order"][0] == "c2"
    inst, msgs = plan_negotiation_step(inst, msgs[0], 1.1, policy)
    assert inst.state is FsmState.AGREED
    assert msgs[0].performative is Performative.ACCEPT
    inst2, msgs = plan_negotiation_step(inst, msgs[0], 1.2, policy)
    assert inst2 is inst and msgs == []


def test_negotiation_small_delta_closes_without_proposal():
    inst, msgs = plan_negotiation_step(pn(), inform(), 1.0, ScriptedPolicy(delta=0.10))
    assert inst.state is FsmState.UNCHANGED and msgs == []


def test_threshold_is_strict_after_rounding():
    assert not exceeds_threshold(0.65 - 0.50)
    assert exceeds_threshold(0.97 - 0.80)
    assert not exceeds_threshold(0.15)


def test_five_rejects_escalate_to_coordinator():
    policy = ScriptedPolicy(accept=False)
    inst, msgs = plan_negotiation_step(pn(), inform(), 0.0, policy)
    rejects = 0
    t = 0.0
    while not inst.terminal:
        t += 0.1
        m = msgs[0]
        inst, msgs = plan_negotiation_step(inst, m, t, policy)
        rejects += m.performative is Performative.REJECT
    assert rejects == H_MAX
    assert inst.state is FsmState.ESCALATED
    assert inst.history_length == H_MAX
    assert msgs[0].receiver == "coordinator" and msgs[0].conversation_id == inst.child.id
    assert inst.child.kind is ProtocolKind.ESCALATION and inst.child.parent == "pn-1"


def test_negotiation_expiry_while_proposed_escalates():
    inst, _ = plan_negotiation_step(pn(), inform(), 0.0, ScriptedPolicy(accept=False))
    inst, out = expire(inst, 30.0)
    assert inst.state is FsmState.ESCALATED
    assert out[0].kind is EventKind.TIMEOUT
    assert out[1].receiver == "coordinator"


@given(st.floats(0, 29.99), st.floats(0, 100))
def test_nested_deadline_within_45s_of_root(escalated_after, extra):
    root = pn(100.0)
    child = new_instance("esc", ProtocolKind.ESCALATION, "planner", ("coordinator",), 100.0 + escalated_after,
                         parent=root)
    grand = new_instance("esc2", ProtocolKind.ESCALATION, "planner", ("coordinator",),
                         min(child.deadline, 100.0 + escalated_after + extra), parent=child)
    assert child.deadline <= 145.0 and grand.deadline <= 145.0
    assert child.deadline == min(100.0 + escalated_after + 15.0, 145.0)


def test_registry_chain_spans_and_due():
    reg = ProtocolRegistry()
    root = reg.open(ProtocolKind.PLAN_NEGOTIATION, "executor", ("executor", "planner"), 0.0)
    assert root.id == "pn-00001" and root.deadline == TIMEOUTS[ProtocolKind.PLAN_NEGOTIATION]
    inst, _ = plan_negotiation_step(root, inform(root.id), 0.0, ScriptedPolicy(accept=False))
    inst, _ = expire(inst, 30.0)
    child = reg.update(inst)
    assert child is not None and child.deadline == 45.0
    assert reg.due(44.0) == []
    assert [i.id for i in reg.due(45.0)] == [child.id]
    done, _ = expire(child, 45.0)
    reg.update(done)
    assert reg.chain_spans() == {root.id: 45.0}
    assert reg.open_instances() == []


def test_resolve_escalation_prefers_risk_coverage():
    risk = {"c1": 0.5, "c2": 0.9}
    a, b = {"order": ["c1", "c2"]}, {"order": ["c2", "c1"]}
    assert risk_coverage(["c2", "c1"], risk) == pytest.approx(0.9 + 0.25)
    assert resolve_escalation([a, b], risk) is b
    assert resolve_escalation([], risk) is None


def test_bid_validation():
    with pytest.raises(ValueError):
        Bid("a", capability=1.2)
    with pytest.raises(ValueError):
        Bid("a", cost=0)
