"""Multi-agent audit engine under the virtual clock.

One engine serves FullMAS and its protocol/self-healing ablations; the flags
only change how agents talk (protocol messages vs. direct calls) and how
failures are handled (local recovery vs. manual intervention). Planning,
tool simulation and PFIR are the same code in every variant.

Agents: ``planner``, ``executor``, ``repair``, ``coordinator`` and command
executors ``cmd-1..k``; ``cmd-i`` hosts the tools ``static-i``,
``symbolic-i`` and ``fuzz-i``.
"""

from __future__ import annotations

import dataclasses
import logging
from collections import deque
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any

from auditmas.agents import Action, AgentCore, Goal, Role, act, decide, perceive
from auditmas.beliefs import Atom, Belief, atom, entails, revise
from auditmas.domain import EventKind, Message, Performative, SystemState
from auditmas.planner import ANALYSES, AuditPlan, build_plan, degrees, risk_score, should_revise
from auditmas.protocols import (
    Bid, FsmState, ProtocolInstance, ProtocolKind, ProtocolRegistry, auction_close,
    contract_net_round, expire, plan_negotiation_step, record_bid, resolve_escalation,
)
from auditmas.repair import (
    PlanContext, RepairTicket, Strategy, classify_failure, failure_report, generate_diagnostic,
    next_strategy, pfir_step,
)
from auditmas.sim.faults import Fault, FaultKind
from auditmas.sim.tools import scan
from auditmas.sim.world import SimBroker, World

logger = logging.getLogger(__name__)

SEVERITY_URGENCY = {"critical": 1.0, "high": 0.8, "medium": 0.5, "low": 0.3}
P = Performative


@dataclass
class RunResult:
    variant: str
    seed: int
    world: World
    reason: str
    deadlock: bool
    engine: Any = field(repr=False, default=None)

    @property
    def records(self) -> list[dict]:
        return self.world.log.records

    @property
    def state(self) -> SystemState:
        return self.world.log.state

    def log_text(self) -> str:
        return self.world.log.dumps()


def id_order_plan(corpus) -> AuditPlan:
    return AuditPlan(tuple((c, ANALYSES) for c in sorted(corpus)), 0, 0.0, {c: 0.0 for c in corpus})


def initial_plan(world: World) -> AuditPlan:
    """Risk-ordered plan, or contract-id order when the planner is ablated."""
    cfg = world.cfg
    if cfg.architecture.planner:
        return build_plan(world.corpus, None, cfg.agents.planner)
    return id_order_plan(world.corpus)


def plan_from_dict(d: Mapping) -> AuditPlan:
    analyses = tuple(d.get("analyses", ("static", "symbolic", "fuzz")))
    return AuditPlan(tuple((c, analyses) for c in d["order"]), int(d["version"]),
                     float(d.get("created_at", 0.0)), dict(d.get("risk", {})))


def plan_to_dict(plan: AuditPlan) -> dict:
    return {"order": plan.order, "version": plan.version, "created_at": plan.created_at,
            "risk": {c: round(r, 9) for c, r in plan.risk.items()}}


# -- agent plumbing -------------------------------------------------------

class SimAgent:
    role = Role.COORDINATOR

    def __init__(self, engine: MASEngine, agent_id: str):
        self.e = engine
        self.id = agent_id
        self.core = AgentCore(agent_id, self.role, policy=self.policy, interpret=self.interpret)
        self.inbox: list[Message] = []

    @property
    def world(self) -> World:
        return self.e.world

    @property
    def now(self) -> float:
        return self.e.world.now

    @property
    def cfg(self):
        return self.e.world.cfg

    def receive(self, m: Message) -> None:
        self.inbox.append(m)
        self.e.wake(self)

    def cycle(self) -> None:
        msgs, self.inbox = self.inbox, []
        self.core = perceive(self.core, msgs)
        for m in msgs:
            self.handle(m)
        self.deliberate()

    def deliberate(self) -> None:
        for _ in range(16):
            self.core, action = decide(self.core)
            if action is None:
                return
            self.core, emitted = act(self.core, action, self.effector)
            for m in emitted:
                self.send(m)
            if action.name != "noop":
                return

    def interpret(self, beliefs, m: Message) -> list[Belief]:
        return []

    def policy(self, beliefs, goal: Goal) -> Action | None:
        return None

    def effector(self, action: Action) -> list:
        return []

    def handle(self, m: Message) -> None:
        pass

    def believe(self, formula: Atom, confidence: float = 1.0, source: str | None = None) -> None:
        b = Belief(formula, confidence, source or self.id, self.now)
        self.core = dataclasses.replace(self.core, beliefs=revise(self.core.beliefs, b))

    def send(self, m: Message) -> None:
        self.e.transmit(m)

    def later(self, delay: float, fn: Callable, *args):
        return self.world.clock.call_later(delay, self._fire, fn, args, label=self.id)

    def _fire(self, fn: Callable, args: tuple) -> None:
        fn(*args)
        self.deliberate()

    def msg(self, perf: Performative, to: str, conv: str | None = None, **content) -> Message:
        return Message(perf, self.id, to, content, conv, self.now)


class Wallet:
    """Token allowance of one agent.

    With protocols the allowance is leased from the coordinator's auction in
    blocks; without, every use is debited from the shared budget directly.
    """

    def __init__(self, agent: SimAgent):
        self.agent = agent
        self.allowance = 0.0
        self.waiters: deque = deque()
        self.pending: str | None = None
        self.rejects = 0
        self._watchdog = None

    def acquire(self, amount: float, urgency: float, benefit: float, cont: Callable[[bool], None]) -> None:
        a = self.agent
        if not a.e.protocols_on:
            cont(a.world.debit(a.id, amount))
            return
        if not self.waiters and self.allowance >= amount:
            self.allowance -= amount
            cont(True)
            return
        self.waiters.append((amount, urgency, benefit, cont))
        if self.pending is None:
            self._request()

    def refund(self, amount: float) -> None:
        if self.agent.e.protocols_on:
            self.allowance += amount

    def _request(self) -> None:
        a = self.agent
        need = sum(w[0] for w in self.waiters) - self.allowance
        amount = need if self.rejects else max(need, a.cfg.agents.lease_tokens)
        urgency = max(w[1] for w in self.waiters)
        benefit = max(w[2] for w in self.waiters)
        a.world.emit(EventKind.RESOURCE_REQUESTED, agent=a.id, resource_type="llm", amount=amount)
        inst = a.e.join_auction(a.id)
        self.pending = inst.id
        a.send(a.msg(P.BID, "coordinator", inst.id, topic="lease", urgency=urgency,
                     benefit=benefit, cost=amount))
        # no answer by the auction deadline counts as a rejection
        self._watchdog = a.later(inst.deadline - a.now + 1.0, self._no_answer, inst.id)

    def _no_answer(self, pid: str) -> None:
        if self.pending == pid:
            self._rejected()

    def on_reply(self, m: Message) -> None:
        if m.conversation_id != self.pending:
            return
        self.agent.world.clock.cancel(self._watchdog)
        self.pending = None
        if m.performative is P.AWARD:
            self.rejects = 0
            self.allowance += float(m.content["amount"])
            self._serve()
        else:
            self._rejected()

    def _serve(self) -> None:
        while self.waiters and self.allowance >= self.waiters[0][0]:
            amount, _, _, cont = self.waiters.popleft()
            self.allowance -= amount
            cont(True)
        if self.waiters and self.pending is None:
            self._request()

    def _rejected(self) -> None:
        self.pending = None
        self.rejects += 1
        if self.rejects >= 3:
            waiters, self.waiters = self.waiters, deque()
            self.rejects = 0
            for *_, cont in waiters:
                cont(False)
            return
        self.agent.later(self.agent.cfg.agents.retry_interval, self._retry)

    def _retry(self) -> None:
        if self.waiters and self.pending is None:
            self._request()


# -- roles -----------------------------------------------------------------

class PlannerPolicy:
    def __init__(self, agent: PlannerAgent):
        self.agent = agent

    def assess(self, findings: Mapping) -> tuple[float, Mapping | None]:
        return self.agent.assess(findings)

    def respond(self, plan: Mapping) -> bool:
        return True

    def counter(self, plan: Mapping, reply: Mapping) -> Mapping:
        return plan_to_dict(self.agent.plan)


class PlannerAgent(SimAgent):
    role = Role.PLANNER

    def __init__(self, engine, agent_id="planner"):
        super().__init__(engine, agent_id)
        self.plan = engine.plan
        self.policy_obj = PlannerPolicy(self)
        self._degree = degrees(self.world.corpus)
        self.believe(atom("plan_version", 0))
        for c, r in self.plan.risk.items():
            self.believe(atom("risk_score", c, round(r, 9)))

    def interpret(self, beliefs, m: Message) -> list[Belief]:
        c = m.content
        if c.get("topic") == "finding":
            return [Belief(atom("vulnerable", c["contract"], c["vclass"]), c["confidence"], m.sender, m.sent_at),
                    Belief(atom("severity", c["contract"], c["vulnerability"], c["severity"]), 1.0,
                           m.sender, m.sent_at)]
        if c.get("topic") == "repair_failed":
            return [Belief(atom("repair_feasible", c["artifact"], False), 1.0, m.sender, m.sent_at)]
        return []

    def assess(self, findings: Mapping) -> tuple[float, Mapping | None]:
        cid = findings["contract"]
        contract = self.world.corpus[cid]
        old = self.core.beliefs.value("risk_score", cid, default=0.0)
        new = risk_score(contract, self.core.beliefs, None, self.cfg.agents.planner, self._degree[cid]).total
        delta = round(new - old, 9)
        if delta:
            self.believe(atom("risk_score", cid, round(new, 9)))
            self.world.emit(EventKind.RISK_CHANGED, contract=cid, delta=delta)
        if not self.cfg.architecture.planner or not should_revise(old, new, self.cfg.protocols.theta):
            return delta, None
        self.plan = build_plan(self.world.corpus, self.core.beliefs, self.cfg.agents.planner,
                               self.plan.version + 1, self.now)
        self.believe(atom("plan_version", self.plan.version))
        return delta, plan_to_dict(self.plan)

    def handle(self, m: Message) -> None:
        topic = m.content.get("topic")
        if not self.e.protocols_on:
            if topic == "finding":
                _, plan = self.assess(m.content)
                if plan is not None:
                    self.send(self.msg(P.PROPOSE, "executor", topic="plan", plan=plan))
            return
        inst = self.e.registry.get(m.conversation_id)
        if inst is not None and inst.kind is ProtocolKind.PLAN_NEGOTIATION:
            new, out = plan_negotiation_step(inst, m, self.now, self.policy_obj, self.cfg.protocols.theta)
            self.e.update_protocol(inst, new)
            for o in out:
                self.send(dataclasses.replace(o, content={**o.content, "topic": "plan"}))
        elif inst is not None and inst.kind is ProtocolKind.ESCALATION and topic == "decision":
            plan = m.content.get("plan")
            if plan and plan["version"] > self.plan.version:
                self.plan = plan_from_dict(plan)


class ExecutorPolicy:
    def __init__(self, agent: ExecutorAgent):
        self.agent = agent

    def assess(self, findings):
        return 0.0, None

    def respond(self, plan: Mapping) -> bool:
        return plan["version"] >= self.agent.plan.version

    def reject_reason(self, plan: Mapping) -> dict:
        return {"current_version": self.agent.plan.version}

    def counter(self, plan, reply):
        return plan


@dataclass
class Confirm:
    vid: str
    contract: str
    vclass: str
    severity: str
    confidence: float
    stage: str = "new"
    gen: int = 0
    artifact: str | None = None
    cn: str | None = None
    timer: Any = None
    diagnostic: str = ""

    @property
    def item(self) -> str:
        return f"confirm:{self.vid}"


class ExecutorAgent(SimAgent):
    role = Role.EXECUTOR

    def __init__(self, engine, agent_id="executor"):
        super().__init__(engine, agent_id)
        self.plan = engine.plan
        self.modalities = list(self.cfg.agents.tools)
        self.inflight: dict[str, dict] = {}
        self.retry_at: dict[str, float] = {}
        self.confirms: dict[str, Confirm] = {}
        self.wallet = Wallet(self)
        self.neg_policy = ExecutorPolicy(self)
        self._set_goals()

    # goals: analyzed(c, m) for every planned (contract, modality)
    def _set_goals(self) -> None:
        n = len(self.modalities)
        goals = [Goal(float(-(rank * n + j)), f"{c}:{m}", atom("analyzed", c, m))
                 for rank, (c, analyses) in enumerate(self.plan.entries)
                 for j, m in enumerate(self.modalities) if m in analyses]
        self.core = self.core.with_goals(goals)

    def adopt(self, plan: Mapping) -> None:
        if plan["version"] >= self.plan.version:
            self.plan = plan_from_dict(plan)
            self._set_goals()

    def unachieved(self) -> list[Goal]:
        return [g for g in self.core.goals if not entails(self.core.beliefs, g.formula)]

    def open_work(self) -> list[str]:
        return [c.item for c in self.confirms.values() if c.stage != "done"]

    def policy(self, beliefs, goal: Goal) -> Action | None:
        if entails(beliefs, goal.formula) or goal.goal_id in self.inflight \
                or self.retry_at.get(goal.goal_id, -1.0) > self.now:
            return None
        c, m = goal.formula.args
        return Action("dispatch", goal, {"contract": c, "modality": m})

    def effector(self, action: Action) -> list:
        c, m = action.params["contract"], action.params["modality"]
        gid = action.goal.goal_id
        item = f"task:{c}:{m}"
        content = {"topic": "task", "work_item": item, "contract": c, "modality": m, "goal": gid}
        if not self.e.protocols_on:
            self.inflight[gid] = {"cn": None, "item": item}
            return [self.msg(P.EXECUTE, "cmd-1", **content)]
        inst = self.e.open_protocol(ProtocolKind.CONTRACT_NET, self.id, self.e.command_ids, content)
        self.inflight[gid] = {"cn": inst.id, "item": item}
        self.later(self.cfg.protocols.bid_window, self._bid_window, inst.id)
        return [self.msg(P.CFP, a, inst.id, **content) for a in self.e.command_ids]

    def _bid_window(self, pid: str) -> None:
        inst = self.e.registry.get(pid)
        if inst is not None and not inst.terminal and inst.bids:
            self._award(inst)

    def _award(self, inst: ProtocolInstance) -> None:
        new, out = contract_net_round(inst, now=self.now)
        self.e.update_protocol(inst, new)
        for o in out:
            self.send(dataclasses.replace(o, content={**o.content, "topic": inst.content["topic"]}))
        if inst.content["topic"] == "task":
            gid = inst.content["goal"]
            task = self.inflight.get(gid)
            if task is not None and task["cn"] == inst.id:
                runtime = self.cfg.agents.tools[inst.content["modality"]].runtime
                task["watchdog"] = self.later(2 * runtime + 10.0, self._task_watchdog, gid, inst.id)
        else:
            conf = self._confirm_by_cn(inst.id)
            if conf is not None:
                conf.timer = self.later(self.cfg.agents.repair_watchdog, self._repair_watchdog, conf.vid, inst.id)

    def on_protocol_timeout(self, inst: ProtocolInstance) -> None:
        if inst.kind is not ProtocolKind.CONTRACT_NET:
            return
        if inst.content.get("topic") == "task":
            gid = inst.content["goal"]
            task = self.inflight.get(gid)
            if task is not None and task["cn"] == inst.id:
                del self.inflight[gid]
                self.retry_at[gid] = self.now + self.cfg.agents.retry_interval
                self.later(self.cfg.agents.retry_interval, lambda: None)
        else:
            conf = self._confirm_by_cn(inst.id)
            if conf is not None:
                self.later(self.cfg.agents.retry_interval, self._request_repair, conf.vid)

    def _task_watchdog(self, gid: str, pid: str) -> None:
        task = self.inflight.get(gid)
        if task is not None and task["cn"] == pid:
            del self.inflight[gid]

    def handle(self, m: Message) -> None:
        topic = m.content.get("topic")
        perf = m.performative
        if topic == "lease":
            self.wallet.on_reply(m)
        elif topic == "task" and perf is P.BID:
            self._on_bid(m)
        elif topic == "task_result":
            self._on_task_result(m)
        elif topic == "task_failed":
            self._on_task_failed(m)
        elif topic == "repair" and perf is P.BID:
            self._on_bid(m)
        elif topic == "repair_result":
            self._on_repair_result(m)
        elif topic == "plan":
            self._on_plan(m)
        elif topic == "decision":
            if m.content.get("plan"):
                self.adopt(m.content["plan"])

    def _on_bid(self, m: Message) -> None:
        inst = self.e.registry.get(m.conversation_id)
        if inst is None:
            return
        c = m.content
        new = record_bid(inst, Bid(m.sender, c["capability"], c["availability"]))
        self.e.update_protocol(inst, new)
        if not new.terminal and len(new.bids) == len(new.participants):
            self._award(new)

    def _on_task_result(self, m: Message) -> None:
        c = m.content
        gid = f"{c['contract']}:{c['modality']}"
        task = self.inflight.pop(gid, None)
        if task is not None:
            self.world.clock.cancel(task.get("watchdog"))
        f = atom("analyzed", c["contract"], c["modality"])
        if f in self.core.beliefs:
            return
        self.believe(f, 1.0, m.sender)
        self.world.complete(c["work_item"], contract=c["contract"], modality=c["modality"])
        for fd in c["findings"]:
            self.believe(atom("vulnerable", fd["contract"], fd["vclass"]), fd["confidence"], fd["detecting_tool"])
            if fd["id"] not in self.confirms:
                conf = Confirm(fd["id"], fd["contract"], fd["vclass"], fd["severity"], fd["confidence"])
                self.confirms[conf.vid] = conf
                self._generate(conf.vid)

    def _on_task_failed(self, m: Message) -> None:
        c = m.content
        gid = f"{c['contract']}:{c['modality']}"
        task = self.inflight.get(gid)
        if task is None or (self.e.protocols_on and task["cn"] != m.conversation_id):
            return
        self.world.clock.cancel(task.get("watchdog"))
        del self.inflight[gid]
        self.believe(atom("tool_state", c["tool"], "failed"), 1.0, m.sender)
        if not self.e.self_healing:
            self.world.emit(EventKind.MANUAL_INTERVENTION, work_item=c["work_item"], reason="tool_failed",
                            stall=self.cfg.agents.manual_stall)
            delay = self.cfg.agents.manual_stall
        elif self.e.protocols_on:
            delay = 0.0
        else:
            delay = self.cfg.agents.direct_retry
        self.retry_at[gid] = self.now + delay
        self.later(delay, lambda: None)

    def _on_plan(self, m: Message) -> None:
        if not self.e.protocols_on:
            self.adopt(m.content["plan"])
            return
        inst = self.e.registry.get(m.conversation_id)
        if inst is None:
            return
        new, out = plan_negotiation_step(inst, m, self.now, self.neg_policy)
        self.e.update_protocol(inst, new)
        for o in out:
            if o.performative is P.ACCEPT:
                self.adopt(m.content["plan"])
            self.send(dataclasses.replace(o, content={**o.content, "topic": "plan"}))

    # -- evidence: generate a test, repair it if broken, run it -------------

    def _generate(self, vid: str) -> None:
        conf = self.confirms[vid]
        conf.stage = "tokens"
        a = self.cfg.agents
        self.wallet.acquire(a.test_tokens, SEVERITY_URGENCY[conf.severity], conf.confidence,
                            lambda ok: self._generate_funded(vid, ok))

    def _generate_funded(self, vid: str, ok: bool) -> None:
        conf = self.confirms[vid]
        if not ok:
            self._finish(conf, "no_budget")
            return
        self._invoke_generation(vid)

    def _invoke_generation(self, vid: str) -> None:
        conf = self.confirms[vid]
        a = self.cfg.agents
        if self.core.beliefs.value("resource_available", "llm") == 0 and self.e.self_healing:
            # believed down: probe the endpoint before spending an invocation
            if self.world.faults.llm_down(self.now):
                self.later(a.retry_interval, self._invoke_generation, vid)
                return
            self.believe(atom("resource_available", "llm", 1))
        purpose = "regenerate" if conf.gen else "generate_test"
        if not self.world.llm_call(purpose, conf.item, self.id):
            self.believe(atom("resource_available", "llm", 0))
            if self.e.self_healing:
                delay = a.retry_interval if self.e.protocols_on else a.direct_retry
            else:
                delay = a.manual_stall
                self.world.emit(EventKind.MANUAL_INTERVENTION, work_item=conf.item, reason="llm_failed",
                                stall=delay)
            self.later(delay, self._invoke_generation, vid)
            return
        conf.stage = "generating"
        self.later(a.test_gen_seconds, self._generated, vid)

    def _generated(self, vid: str) -> None:
        conf = self.confirms[vid]
        rr = self.world.rr
        artifact = f"test:{vid}:{conf.gen}"
        if rr.uniform("broken", vid, conf.gen) >= self.cfg.agents.p_broken:
            self._run_test(vid)
            return
        conf.artifact = artifact
        mix = self.cfg.agents.failure_mix
        names = sorted(mix)
        u, acc, cls = rr.uniform("fclass", artifact), 0.0, names[-1]
        total = sum(mix.values())
        for n in names:
            acc += mix[n] / total
            if u < acc:
                cls = n
                break
        diag = generate_diagnostic(cls, rr.fork("diag", artifact))
        self.world.emit(EventKind.REPAIR_NEEDED, artifact=artifact, failure_type=classify_failure(diag).value,
                        contract=conf.contract, work_item=conf.item)
        conf.stage = "repair"
        conf.diagnostic = diag
        if not self.e.self_healing:
            stall = self.cfg.agents.manual_stall
            self.world.emit(EventKind.MANUAL_INTERVENTION, work_item=conf.item, reason="repair_needed",
                            stall=stall)
            self.later(stall, self._regenerate, vid)
            return
        self._request_repair(vid)

    def _regenerate(self, vid: str) -> None:
        conf = self.confirms[vid]
        if conf.gen + 1 > self.cfg.agents.max_regenerations:
            self._finish(conf, "abandoned")
            return
        conf.gen += 1
        self._generate(vid)

    def plan_context(self, contract: str) -> dict:
        plan = self.plan
        pending = [plan.risk.get(c, 0.0) for c, _ in plan.entries if c != contract and any(
            not entails(self.core.beliefs, atom("analyzed", c, m)) for m in self.modalities)]
        return {"rank": plan.rank(contract), "plan_size": len(plan.entries),
                "best_pending_risk": max(pending, default=0.0),
                "mission_value": plan.risk.get(contract, 0.0) or 0.5}

    def _request_repair(self, vid: str) -> None:
        conf = self.confirms[vid]
        if conf.stage != "repair":
            return
        content = {"topic": "repair", "work_item": conf.item, "artifact": conf.artifact,
                   "contract": conf.contract, "diagnostic": conf.diagnostic, **self.plan_context(conf.contract)}
        if not self.e.protocols_on:
            self.send(self.msg(P.REPAIR_NEEDED, "repair", **content))
            return
        inst = self.e.open_protocol(ProtocolKind.CONTRACT_NET, self.id, ("repair",), content)
        conf.cn = inst.id
        self.later(self.cfg.protocols.bid_window, self._bid_window, inst.id)
        self.send(self.msg(P.REPAIR_NEEDED, "repair", inst.id, **content))

    def _confirm_by_cn(self, pid: str) -> Confirm | None:
        for conf in self.confirms.values():
            if conf.cn == pid:
                return conf
        return None

    def _repair_watchdog(self, vid: str, pid: str) -> None:
        conf = self.confirms[vid]
        if conf.stage == "repair" and conf.cn == pid:
            self._request_repair(vid)

    def _on_repair_result(self, m: Message) -> None:
        c = m.content
        vid = c["work_item"].split(":", 1)[1]
        conf = self.confirms.get(vid)
        if conf is None or conf.stage != "repair" or conf.artifact != c["artifact"]:
            return
        self.world.clock.cancel(conf.timer)
        if c["status"] == "repaired":
            self._run_test(vid)
        else:
            self.believe(atom("repair_feasible", c["artifact"], False), 1.0, m.sender)
            self._finish(conf, "abandoned")

    def _run_test(self, vid: str) -> None:
        conf = self.confirms[vid]
        conf.stage = "testing"
        self.later(self.cfg.agents.test_run_seconds, self._tested, vid)

    def _tested(self, vid: str) -> None:
        conf = self.confirms[vid]
        real = vid in self.e.truth
        if real or self.world.rr.uniform("fp-confirm", vid) < self.cfg.agents.fp_confirm:
            self.world.emit(EventKind.VULN_STATUS, vulnerability=vid, status="confirmed")
            self.believe(atom("vulnerable", conf.contract, conf.vclass), 1.0)
            self._finish(conf, "confirmed")
            self._inform_planner(conf)
        else:
            self.believe(atom("not_vulnerable", conf.contract, conf.vclass), 0.9)
            self._finish(conf, "refuted")

    def _finish(self, conf: Confirm, outcome: str) -> None:
        conf.stage = "done"
        self.world.complete(conf.item, outcome, vulnerability=conf.vid)

    def _inform_planner(self, conf: Confirm) -> None:
        content = {"topic": "finding", "work_item": conf.item, "vulnerability": conf.vid,
                   "contract": conf.contract, "vclass": conf.vclass, "severity": conf.severity,
                   "confidence": conf.confidence}
        if not self.e.protocols_on:
            self.send(self.msg(P.INFORM, "planner", **content))
            return
        inst = self.e.open_protocol(ProtocolKind.PLAN_NEGOTIATION, self.id, (self.id, "planner"), {})
        self.send(self.msg(P.INFORM, "planner", inst.id, **content))


class CommandAgent(SimAgent):
    role = Role.COMMAND_EXECUTOR

    def __init__(self, engine, agent_id: str):
        super().__init__(engine, agent_id)
        i = int(agent_id.split("-")[1])
        self.tools = {m: self.world.tools[f"{m}-{i}"] for m in self.cfg.agents.tools}
        spread = self.cfg.agents.capability_spread
        self.capability = {m: min(1.0, max(0.0, t.profile.capability + spread * (
            self.world.rr.uniform("capability", agent_id, m) - 0.5))) for m, t in self.tools.items()}
        self.running: dict[str, dict] = {}
        for t in self.tools.values():
            self.believe(atom("tool_state", t.id, "up"))

    def tool_ok(self, tool_id: str) -> bool:
        return self.core.beliefs.value("tool_state", tool_id) == "up"

    def handle(self, m: Message) -> None:
        c = m.content
        if c.get("topic") != "task":
            return
        tool = self.tools[c["modality"]]
        if m.performative is P.CFP:
            if not self.tool_ok(tool.id):
                return
            avail = 1.0 - len(self.running) / len(self.tools)
            self.send(self.msg(P.BID, m.sender, m.conversation_id, topic="task", work_item=c["work_item"],
                               capability=round(self.capability[c["modality"]], 6),
                               availability=round(avail, 6)))
        elif m.performative in (P.AWARD, P.EXECUTE):
            self._start(tool, m)

    def _start(self, tool, m: Message) -> None:
        c = m.content
        job = {"tool": tool.id, "contract": c["contract"], "modality": c["modality"], "conv": m.conversation_id,
               "work_item": c["work_item"], "to": m.sender, "aborted": False}
        fault = self.world.tool_fault(tool.id)
        if fault is not None:
            self._fail(job, fault)
            return
        self.running[tool.id] = job
        self.later(tool.profile.runtime, self._finish, job)

    def _fail(self, job: dict, fault: Fault) -> None:
        err = "crash" if fault.kind is FaultKind.TOOL_CRASH else "timeout"
        self.world.emit(EventKind.TOOL_FAILED, tool=job["tool"], error=err)
        self.world.disrupt(fault, job["work_item"])
        self.believe(atom("tool_state", job["tool"], "failed"))
        self.send(self.msg(P.FAILURE, job["to"], job["conv"], topic="task_failed", work_item=job["work_item"],
                           contract=job["contract"], modality=job["modality"], tool=job["tool"], error=err))
        if self.e.self_healing:
            self.later(self.cfg.agents.retry_interval, self._probe, job["tool"])
        else:
            self.world.emit(EventKind.MANUAL_INTERVENTION, work_item=job["tool"], reason="tool_failed",
                            stall=self.cfg.agents.manual_stall)
            self.later(self.cfg.agents.manual_stall, self._probe, job["tool"])

    def _probe(self, tool_id: str) -> None:
        if self.world.tool_fault(tool_id) is None:
            self.believe(atom("tool_state", tool_id, "up"))
        else:
            delay = self.cfg.agents.retry_interval if self.e.self_healing else self.cfg.agents.manual_stall
            self.later(delay, self._probe, tool_id)

    def on_fault(self, fault: Fault, starting: bool) -> None:
        if not starting or fault.kind not in (FaultKind.TOOL_CRASH, FaultKind.TIMEOUT_INJECTION):
            return
        job = self.running.pop(fault.target, None)
        if job is not None:
            job["aborted"] = True
            self._fail(job, fault)

    def _finish(self, job: dict) -> None:
        if job["aborted"]:
            return
        self.running.pop(job["tool"], None)
        tool = self.world.tools[job["tool"]]
        contract = self.world.corpus[job["contract"]]
        findings = scan(tool.profile, contract, self.world.rr)
        for f in findings:
            self.world.emit(EventKind.VULN_DETECTED, vulnerability=f.payload(tool.id), contract=f.contract)
        payload = [{**f.payload(tool.id), "contract": f.contract} for f in findings]
        self.send(self.msg(P.INFORM, job["to"], job["conv"], topic="task_result", work_item=job["work_item"],
                           contract=job["contract"], modality=job["modality"], tool=tool.id, findings=payload))


class RepairAgent(SimAgent):
    role = Role.REPAIRER

    def __init__(self, engine, agent_id="repair"):
        super().__init__(engine, agent_id)
        self.tickets: dict[str, dict] = {}
        self.wallet = Wallet(self)

    def handle(self, m: Message) -> None:
        c = m.content
        topic = c.get("topic")
        if topic == "lease":
            self.wallet.on_reply(m)
        elif topic != "repair":
            return
        elif m.performative is P.REPAIR_NEEDED and self.e.protocols_on:
            self.send(self.msg(P.BID, m.sender, m.conversation_id, topic="repair", work_item=c["work_item"],
                               capability=0.9, availability=1.0 if not self._busy() else 0.5))
        elif m.performative in (P.AWARD, P.REPAIR_NEEDED):
            self._take(m)

    def _busy(self) -> bool:
        return any(t["status"] == "running" for t in self.tickets.values())

    def _take(self, m: Message) -> None:
        c = m.content
        art = c["artifact"]
        st = self.tickets.get(art)
        if st is not None:
            st["conv"], st["to"] = m.conversation_id, m.sender
            if st["status"] == "done":
                self._report(st)
            return
        cfg = self.cfg.repair
        ticket = RepairTicket(art, c["contract"], classify_failure(c["diagnostic"]),
                              budget_remaining=cfg.ticket_budget, mission_value=float(c["mission_value"]),
                              diagnostic=c["diagnostic"])
        ctx = PlanContext(int(c["rank"]), int(c["plan_size"]), float(c["best_pending_risk"]))
        st = {"ticket": ticket, "ctx": ctx, "status": "running", "conv": m.conversation_id, "to": m.sender,
              "work_item": c["work_item"], "outcome": None}
        self.tickets[art] = st
        self._attempt(art)

    def _attempt(self, art: str) -> None:
        st = self.tickets[art]
        ticket = st["ticket"]
        cfg = self.cfg.repair
        strategy = next_strategy(ticket, cfg)
        if strategy is Strategy.GENERATIVE and len(ticket.attempts) < cfg.max_attempts:
            if self.e.self_healing and self.core.beliefs.value("resource_available", "llm") == 0:
                if self.world.faults.llm_down(self.now):
                    self.later(self.cfg.agents.retry_interval, self._attempt, art)
                    return
                self.believe(atom("resource_available", "llm", 1))
            if not st.get("funded"):
                self.wallet.acquire(cfg.generative_cost, 0.9, ticket.mission_value,
                                    lambda ok: self._funded(art, ok))
                return
        self._run_attempt(art)

    def _funded(self, art: str, ok: bool) -> None:
        self.tickets[art]["funded"] = "yes" if ok else "no"
        self._run_attempt(art)

    def _run_attempt(self, art: str) -> None:
        st = self.tickets[art]
        ticket = st["ticket"]
        cfg = self.cfg.repair
        funded = st.pop("funded", None)
        idx = len(ticket.attempts)
        strategy = next_strategy(ticket, cfg)
        rr = self.world.rr

        def invoke() -> bool:
            ok = self.world.llm_call("generative_repair", st["work_item"], self.id)
            if not ok:
                self.believe(atom("resource_available", "llm", 0))
            return ok

        new, outcome = pfir_step(ticket, lambda t, k, s: rr.uniform("repair", t.artifact, k), cfg, st["ctx"],
                                 invoke, (lambda cost: funded != "no"))
        if funded == "yes" and (len(new.attempts) == idx or new.attempts[-1].cost == 0):
            self.wallet.refund(cfg.generative_cost)
        if len(new.attempts) == idx:
            self._done(st, new, outcome)
            return
        self.believe(atom("repairing", ticket.contract, idx + 1))
        self.believe(atom("last_fix", ticket.failure_class.value))
        last = new.attempts[-1]
        self.later(cfg.seconds(strategy), self._attempt_done, art, new, outcome, last)

    def _attempt_done(self, art: str, ticket: RepairTicket, outcome, last) -> None:
        st = self.tickets[art]
        self.world.emit(EventKind.REPAIR_ATTEMPT, artifact=art, index=len(ticket.attempts) - 1,
                        strategy=last.strategy.value, outcome=last.outcome, cost=last.cost,
                        work_item=st["work_item"])
        st["ticket"] = ticket
        if outcome is None:
            self._attempt(art)
        else:
            self._done(st, ticket, outcome)

    def _done(self, st: dict, ticket: RepairTicket, outcome) -> None:
        st["ticket"] = ticket
        st["status"] = "done"
        st["outcome"] = outcome
        self._report(st)
        if not outcome.repaired:
            report = failure_report(ticket)
            self.send(self.msg(P.FAILURE, "planner", None, topic="repair_failed", work_item=st["work_item"],
                               **report))

    def _report(self, st: dict) -> None:
        outcome = st["outcome"]
        ticket = st["ticket"]
        if outcome.repaired:
            m = self.msg(P.INFORM, st["to"], st["conv"], topic="repair_result", status="repaired",
                         artifact=ticket.artifact, attempts=len(ticket.attempts), work_item=st["work_item"])
        else:
            m = self.msg(P.FAILURE, st["to"], st["conv"], topic="repair_result", status="abandoned",
                         work_item=st["work_item"], **failure_report(ticket))
        self.send(m)


class CoordinatorAgent(SimAgent):
    role = Role.COORDINATOR

    def handle(self, m: Message) -> None:
        inst = self.e.registry.get(m.conversation_id)
        if inst is None:
            return
        if inst.kind is ProtocolKind.RESOURCE_AUCTION and m.performative is P.BID:
            c = m.content
            bid = Bid(m.sender, urgency=c["urgency"], benefit=c["benefit"], cost=c["cost"])
            self.e.update_protocol(inst, record_bid(inst, bid))
        elif inst.kind is ProtocolKind.ESCALATION and m.performative is P.PROPOSE:
            if inst.terminal:
                return
            candidates = m.content.get("candidates", [])
            risk: dict[str, float] = {}
            for cand in candidates:
                risk.update(cand.get("risk", {}))
            plan = resolve_escalation(candidates, risk)
            new = inst.finish(FsmState.RESOLVED, self.now, {"version": plan["version"] if plan else None})
            self.e.update_protocol(inst, new)
            for to in inst.participants[1:]:
                self.send(self.msg(P.INFORM, to, inst.id, topic="decision", plan=plan))

    def close_auction(self, pid: str) -> None:
        inst = self.e.registry.get(pid)
        if inst is None or inst.terminal or not inst.bids:
            return
        new, out, result = auction_close(inst, self.world.log.state.resources, self.now)
        for who, amount in result.allocations:
            self.world.emit(EventKind.RESOURCE_ALLOCATED, agent=who, resource_type="llm", amount=amount)
        self.e.update_protocol(inst, new)
        for o in out:
            self.send(dataclasses.replace(o, content={**o.content, "topic": "lease"}))


# -- engine -----------------------------------------------------------------

class MASEngine:
    def __init__(self, cfg, seed: int | None = None):
        variant = cfg.architecture.variant
        if variant not in ("FullMAS", "NoProtocols", "NoSelfHealing"):
            raise ValueError(f"MASEngine does not run {variant}")
        self.variant = variant
        self.protocols_on = variant != "NoProtocols"
        self.self_healing = variant != "NoSelfHealing"
        self.seed = cfg.seed if seed is None else int(seed)
        self.world = World(cfg, self.seed, cfg.agents.agent_ids())
        self.truth = {f"{c.id}/{v.vclass}" for c in self.world.corpus.values() for v in c.ground_truth_vulns}
        self.broker = SimBroker(self.world, self._deliver)
        self.registry = ProtocolRegistry()
        self.plan = initial_plan(self.world)
        self.command_ids = [f"cmd-{i}" for i in range(1, cfg.agents.n_command + 1)]
        self.agents: dict[str, SimAgent] = {
            "planner": PlannerAgent(self),
            "executor": ExecutorAgent(self),
            "repair": RepairAgent(self),
            "coordinator": CoordinatorAgent(self, "coordinator"),
        }
        for cid in self.command_ids:
            self.agents[cid] = CommandAgent(self, cid)
        self.world.fault_listeners.append(self._on_fault)
        self._woken: set[str] = set()
        self._started = False
        self.result: RunResult | None = None

    @property
    def executor(self) -> ExecutorAgent:
        return self.agents["executor"]

    def _on_fault(self, fault: Fault, starting: bool) -> None:
        for a in self.agents.values():
            if isinstance(a, CommandAgent):
                a.on_fault(fault, starting)

    # transport
    def transmit(self, m: Message) -> None:
        if self.protocols_on:
            self.broker.send(m)
        else:
            self._call(m)

    def _call(self, m: Message) -> None:
        if self.broker.call(m):
            self.world.clock.call_later(self.world.cfg.agents.latency, self._deliver, m)
        else:
            self.world.clock.call_later(self.world.cfg.agents.direct_retry, self._call, m)

    def _deliver(self, m: Message) -> None:
        agent = self.agents.get(m.receiver)
        if agent is not None:
            agent.receive(m)

    def wake(self, agent: SimAgent) -> None:
        if agent.id not in self._woken:
            self._woken.add(agent.id)
            self.world.clock.call_later(0.0, self._cycle, agent)

    def _cycle(self, agent: SimAgent) -> None:
        self._woken.discard(agent.id)
        agent.cycle()

    # protocol bookkeeping
    def open_protocol(self, kind: ProtocolKind, initiator: str, participants, content: Mapping,
                      parent: ProtocolInstance | None = None) -> ProtocolInstance:
        inst = self.registry.open(kind, initiator, participants, self.world.now, parent, content)
        self._opened(inst)
        return inst

    def _opened(self, inst: ProtocolInstance) -> None:
        self.world.emit(EventKind.PROTOCOL_OPENED, protocol_id=inst.id, kind=inst.kind.value,
                        deadline=inst.deadline, parent=inst.parent, initiator=inst.initiator)
        self.world.clock.schedule(inst.deadline, self._expire, inst.id, label="deadline")

    def join_auction(self, bidder: str) -> ProtocolInstance:
        window = self.world.cfg.protocols.bid_window
        for inst in self.registry.open_instances(ProtocolKind.RESOURCE_AUCTION):
            if self.world.now < inst.started_at + window:
                break
        else:
            inst = self.open_protocol(ProtocolKind.RESOURCE_AUCTION, "coordinator", (), {"topic": "lease"})
            coord = self.agents["coordinator"]
            coord.later(window, coord.close_auction, inst.id)
        if bidder not in inst.participants:
            new = dataclasses.replace(inst, participants=inst.participants + (bidder,))
            self.registry.update(new)
            inst = new
        return inst

    def update_protocol(self, old: ProtocolInstance, new: ProtocolInstance) -> None:
        child = self.registry.update(new)
        if new.terminal and not old.terminal:
            self.world.emit(EventKind.PROTOCOL_CLOSED, protocol_id=new.id, outcome=new.state.value,
                            participants=list(new.participants))
        if child is not None:
            self._opened(child)

    def _expire(self, pid: str) -> None:
        inst = self.registry.get(pid)
        new, out = expire(inst, self.world.now)
        if new is inst:
            return
        for item in out:
            if isinstance(item, Message):
                self.agents["planner"].send(dataclasses.replace(item, content={**item.content, "topic": "escalation"}))
            else:
                self.world.emit(item.kind, **item.payload)
        self.update_protocol(inst, new)
        initiator = self.agents.get(inst.initiator)
        if isinstance(initiator, ExecutorAgent):
            initiator.on_protocol_timeout(new)
            initiator.deliberate()

    # running
    def run(self, until: float | None = None) -> RunResult | None:
        """Run to completion (or pause at virtual time ``until``)."""
        clock = self.world.clock
        if not self._started:
            self._started = True
            clock.call_later(0.0, self.executor.deliberate)
        horizon = self.world.cfg.horizon
        while True:
            nxt = clock.next_at()
            if nxt is None:
                reason = "complete"
                break
            if nxt > horizon:
                reason = "horizon"
                break
            if until is not None and nxt > until:
                clock.now = max(clock.now, until)
                return None
            clock.step()
        return self._finalize(reason)

    def stuck(self) -> dict:
        e = self.executor
        return {"unachieved": [g.goal_id for g in e.unachieved()], "open_work": e.open_work(),
                "inboxes": sum(len(a.inbox) for a in self.agents.values()),
                "timers": self.world.clock.pending()}

    def _finalize(self, reason: str) -> RunResult:
        s = self.stuck()
        deadlock = reason == "complete" and bool(s["unachieved"] or s["open_work"])
        if deadlock:
            self.world.emit(EventKind.DEADLOCK, **s)
        last = self.world.log.records[-1]["timestamp"]
        self.world.emit(EventKind.RUN_ENDED, reason=reason, deadlock=deadlock, last_activity=last,
                        variant=self.variant, seed=self.seed)
        self.result = RunResult(self.variant, self.seed, self.world, reason, deadlock, self)
        return self.result
