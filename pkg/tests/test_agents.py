import pytest

from auditmas.agents import (
    Action, ActionFailed, AgentCore, FreeRunner, Goal, Role, ThreadSafeBroker, act, cycle, decide, perceive,
)
from auditmas.baselines import run_variant
from auditmas.beliefs import Belief, BeliefBase, atom, revise
from auditmas.config import ScenarioConfig
from auditmas.domain import EventKind, Message, Performative
from auditmas.sim.corpus import CorpusSpec
from auditmas.sim.faults import Fault, FaultKind, FaultSchedule


def inform_interpreter(beliefs, m):
    c = m.content
    return [Belief(atom(c["pred"], *c["args"]), c["confidence"], m.sender)]


def inform(pred, *args, confidence=0.9, sender="executor"):
    return Message(Performative.INFORM, sender, "planner",
                   {"pred": pred, "args": list(args), "confidence": confidence})


def test_perceive_adds_informed_belief():
    agent = AgentCore("planner", Role.PLANNER, interpret=inform_interpreter)
    agent = perceive(agent, [inform("vulnerable", "c2", "reentrancy")])
    assert atom("vulnerable", "c2", "reentrancy") in agent.beliefs
    assert agent.inbox == ()


def test_perceive_empty_inbox_is_identity():
    agent = AgentCore("planner", Role.PLANNER, interpret=inform_interpreter)
    assert perceive(agent) == agent


def test_conflicting_informs_equal_sequential_revision():
    m1 = inform("vulnerable", "c1", "reentrancy", confidence=0.6)
    m2 = inform("not_vulnerable", "c1", "reentrancy", confidence=0.4)
    agent = AgentCore("planner", Role.PLANNER, interpret=inform_interpreter).post(m1)
    got = perceive(agent, [m2]).beliefs
    manual = revise(revise(BeliefBase(), inform_interpreter(None, m1)[0]), inform_interpreter(None, m2)[0])
    assert got == manual
    assert list(got.beliefs) == [atom("not_vulnerable", "c1", "reentrancy")]


def test_malformed_message_is_skipped_with_error():
    agent = AgentCore("planner", Role.PLANNER, interpret=inform_interpreter)
    agent = perceive(agent, [inform("unknown_pred", "x"), "garbage"])
    assert len(agent.errors) == 2 and len(agent.beliefs) == 0


def run_policy(beliefs, goal):
    return Action("run", goal)


def test_decide_picks_highest_priority_and_commits():
    goals = (Goal(1, "audit_all", atom("goal", "audit_all")), Goal(2, "critical_first", atom("goal", "crit")))
    agent = AgentCore("executor", Role.EXECUTOR, goals=goals, policy=run_policy)
    agent, action = decide(agent)
    assert action.goal.goal_id == "critical_first"
    assert agent.intentions == {"critical_first"}


def test_intention_persists_over_new_higher_priority_goal():
    repair = Goal(1, "repair(c1)", atom("goal", "repair_c1"))
    agent = AgentCore("repair", Role.REPAIRER, goals=(repair,), policy=run_policy)
    agent, _ = decide(agent)
    agent = agent.with_goals([*agent.goals, Goal(9, "urgent", atom("goal", "urgent"))])
    _, action = decide(agent)
    assert action.goal.goal_id == "repair(c1)"


def test_no_goals_is_idle():
    agent = AgentCore("x", Role.COORDINATOR)
    assert decide(agent) == (agent, None)


def test_act_on_entailed_goal_drops_intention_without_effect():
    g = Goal(1, "g", atom("goal", "done"))
    agent = AgentCore("x", Role.EXECUTOR, beliefs=BeliefBase().with_beliefs([Belief(g.formula, 1.0)]),
                      goals=(g,), intentions=frozenset({"g"}))
    calls = []
    agent, out = act(agent, Action("run", g), lambda a: calls.append(a) or [])
    assert calls == [] and out == [] and agent.intentions == frozenset()


def test_noop_for_achieved_commitment():
    g = Goal(1, "g", atom("goal", "done"))
    agent = AgentCore("x", Role.EXECUTOR, beliefs=BeliefBase().with_beliefs([Belief(g.formula, 1.0)]),
                      goals=(g,), intentions=frozenset({"g"}))
    agent, action = decide(agent)
    assert action.name == "noop"
    agent, _ = act(agent, action, lambda a: [])
    assert agent.intentions == frozenset()


def test_act_effector_failure_reports_to_self_and_keeps_intention():
    g = Goal(1, "g", atom("goal", "x"))
    agent = AgentCore("x", Role.EXECUTOR, goals=(g,), policy=run_policy)
    agent, action = decide(agent)

    def broken(a):
        raise ActionFailed("tool gone")
    agent, out = act(agent, action, broken)
    assert out[0].performative is Performative.FAILURE and out[0].receiver == "x"
    assert agent.intentions == {"g"}


def test_act_applies_returned_beliefs_and_drops_achieved():
    g = Goal(1, "g", atom("analyzed", "c1", "static"))
    agent = AgentCore("x", Role.EXECUTOR, goals=(g,), policy=run_policy)
    out_msg = Message(Performative.INFORM, "x", "planner", {})
    agent, action, emitted = cycle(agent, [], lambda a: [Belief(g.formula, 1.0), out_msg])
    assert emitted == [out_msg]
    assert agent.intentions == frozenset()


def test_precondition_blocks_action():
    g = Goal(1, "g", atom("goal", "x"))
    agent = AgentCore("x", Role.EXECUTOR, goals=(g,),
                      policy=lambda b, goal: Action("run", goal, precondition=lambda b: False))
    assert decide(agent)[1] is None


def test_intentions_must_name_goals():
    with pytest.raises(ValueError):
        AgentCore("x", Role.EXECUTOR, intentions=frozenset({"ghost"}))


def test_free_running_agents_exchange_messages():
    # a pinger tells a ponger to set a flag; the ponger's goal becomes entailed
    done = atom("responded", "pong")
    ping_goal = Goal(1, "ping", atom("responded", "ping"))
    pong_goal = Goal(1, "pong", done)

    def ping_policy(beliefs, goal):
        return Action("ping", goal)

    def ping_effector(action):
        return [Message(Performative.INFORM, "ping", "pong", {"pred": "responded", "args": ["pong"],
                                                              "confidence": 1.0}),
                Belief(atom("responded", "ping"), 1.0)]

    ping = AgentCore("ping", Role.PLANNER, goals=(ping_goal,), policy=ping_policy)
    pong = AgentCore("pong", Role.EXECUTOR, goals=(pong_goal,), interpret=inform_interpreter)
    broker = ThreadSafeBroker(["ping", "pong"])
    runner = FreeRunner([ping, pong], {"ping": ping_effector, "pong": lambda a: []}, broker)
    final = runner.run(max_cycles=200, timeout=5.0)
    assert done in final["pong"].beliefs
    assert broker.sent == 1


def test_execute_against_crashed_tool_logs_tool_failed():
    faults = FaultSchedule((Fault(FaultKind.TOOL_CRASH, "static-1", 0.0, 100.0, 1.0, "f0"),))
    cfg = ScenarioConfig(corpus=CorpusSpec(n_contracts=3, n_vulns=1), faults=faults)
    res = run_variant(cfg, "FullMAS", 5)
    failed = [r for r in res.records if r["kind"] == EventKind.TOOL_FAILED.value]
    assert failed and failed[0]["payload"]["tool"] == "static-1"
    assert not res.deadlock
