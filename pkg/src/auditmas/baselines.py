"""Non-agent architectures and the variant dispatcher.

``CentralizedScheduler`` is a single controller that polls its workers on a
fixed interval, binds every analysis to the tools of ``cmd-1`` and treats a
silent worker as dead. ``SequentialPipeline`` runs the analyses in contract-id
order and never retries. Both reuse the world, tool and PFIR models of the
agent engine so that runs on the same seed see the same random draws.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

from auditmas.domain import EventKind
from auditmas.mas import MASEngine, RunResult, initial_plan
from auditmas.repair import (
    PlanContext, RepairTicket, classify_failure, generate_diagnostic, next_strategy, pfir_step,
)
from auditmas.sim.faults import Fault, FaultKind
from auditmas.sim.tools import scan
from auditmas.sim.world import World

logger = logging.getLogger(__name__)

CONTROLLER = "coordinator"
REPAIR_NODE = "repair"


class ArchitectureVariant(str, enum.Enum):
    FULL_MAS = "FullMAS"
    CENTRALIZED = "CentralizedScheduler"
    SEQUENTIAL = "SequentialPipeline"
    NO_PROTOCOLS = "NoProtocols"
    NO_AUTONOMY = "NoAutonomy"
    NO_SELF_HEALING = "NoSelfHealing"
    RIGID_PIPELINE = "RigidPipeline"


def pick_failure_class(world: World, artifact: str) -> str:
    mix = world.cfg.agents.failure_mix
    names = sorted(mix)
    total = sum(mix.values())
    u, acc = world.rr.uniform("fclass", artifact), 0.0
    for n in names:
        acc += mix[n] / total
        if u < acc:
            return n
    return names[-1]


@dataclass
class RepairJob:
    artifact: str
    contract: str
    vid: str
    diagnostic: str
    ctx: PlanContext
    mission_value: float
    incarnation: int = 0
    last_heard: float = 0.0
    ticket: RepairTicket | None = None
    done: bool = False


@dataclass
class _Confirm:
    vid: str
    contract: str
    vclass: str
    severity: str
    gen: int = 0
    repair: RepairJob | None = None
    restarts: int = 0

    @property
    def item(self) -> str:
        return f"confirm:{self.vid}"


class CentralizedEngine:
    """One polling controller; workers only act when the controller tells them to."""

    def __init__(self, cfg, seed: int | None = None, variant: str | None = None):
        self.variant = variant or cfg.architecture.variant
        self.seed = cfg.seed if seed is None else int(seed)
        self.world = World(cfg, self.seed, cfg.agents.agent_ids())
        self.cfg = cfg
        self.truth = {f"{c.id}/{v.vclass}" for c in self.world.corpus.values() for v in c.ground_truth_vulns}
        self.plan = initial_plan(self.world)
        self.tasks = [(c, m) for c in self.plan.order for m in cfg.agents.tools]
        self.next_task = 0
        self.running: dict | None = None
        self.tool_retry: dict[str, float] = {}
        self.confirms: dict[str, _Confirm] = {}
        self.world.fault_listeners.append(self._on_fault)
        self.result: RunResult | None = None

    @property
    def now(self) -> float:
        return self.world.now

    def tick_after(self, t: float, strict: bool = False) -> float:
        """First poll tick at or after ``t`` (strictly after when ``strict``)."""
        poll = self.cfg.agents.poll_interval
        k = round(t / poll, 9)
        return (math.floor(k) + 1 if strict else math.ceil(k)) * poll

    def at_tick(self, fn, *args, not_before: float | None = None, strict: bool = False) -> None:
        t = self.tick_after(self.now if not_before is None else max(self.now, not_before), strict)
        self.world.clock.schedule(t, fn, *args, label="poll")

    # -- analysis tasks -----------------------------------------------------

    def _dispatch(self) -> None:
        if self.running is not None or self.next_task >= len(self.tasks):
            return
        c, m = self.tasks[self.next_task]
        tool = f"{m}-1"
        item = f"task:{c}:{m}"
        if self.tool_retry.get(tool, -1.0) > self.now:
            self.at_tick(self._dispatch, not_before=self.tool_retry[tool])
            return
        fault = self.world.tool_fault(tool)
        if fault is not None:
            self._tool_failed(tool, item, fault)
            return
        part = self.world.faults.partition(CONTROLLER, "cmd-1", self.now)
        if part is not None:
            self.world.disrupt(part, item)
            self.at_tick(self._dispatch, strict=True)
            return
        job = {"contract": c, "modality": m, "tool": tool, "item": item, "aborted": False}
        self.running = job
        runtime = self.world.tools[tool].profile.runtime
        self.world.clock.call_later(runtime, self._task_done, job)

    def _tool_failed(self, tool: str, item: str, fault: Fault) -> None:
        err = "crash" if fault.kind is FaultKind.TOOL_CRASH else "timeout"
        self.world.emit(EventKind.TOOL_FAILED, tool=tool, error=err)
        self.world.disrupt(fault, item)
        self.tool_retry[tool] = self.now + self.cfg.agents.health_check
        self.at_tick(self._dispatch, not_before=self.tool_retry[tool])

    def _on_fault(self, fault: Fault, starting: bool) -> None:
        job = self.running
        if starting and job is not None and fault.target == job["tool"] and fault.kind in (
                FaultKind.TOOL_CRASH, FaultKind.TIMEOUT_INJECTION):
            job["aborted"] = True
            self.running = None
            self._tool_failed(job["tool"], job["item"], fault)

    def _task_done(self, job: dict) -> None:
        if job["aborted"]:
            return
        tool = self.world.tools[job["tool"]]
        findings = scan(tool.profile, self.world.corpus[job["contract"]], self.world.rr)
        for f in findings:
            self.world.emit(EventKind.VULN_DETECTED, vulnerability=f.payload(tool.id), contract=f.contract)
        self.at_tick(self._task_noticed, job, findings)

    def _task_noticed(self, job: dict, findings) -> None:
        self.running = None
        self.next_task += 1
        self.world.complete(job["item"], contract=job["contract"], modality=job["modality"])
        for f in findings:
            if f.vulnerability not in self.confirms:
                conf = _Confirm(f.vulnerability, f.contract, f.vclass, f.severity)
                self.confirms[conf.vid] = conf
                self._generate(conf)
        self._dispatch()

    # -- confirmation ---------------------------------------------------------

    def _generate(self, conf: _Confirm) -> None:
        if not self.world.debit(CONTROLLER, self.cfg.agents.test_tokens):
            self.world.complete(conf.item, "no_budget", vulnerability=conf.vid)
            return
        self._invoke(conf)

    def _invoke(self, conf: _Confirm) -> None:
        purpose = "regenerate" if conf.gen else "generate_test"
        if not self.world.llm_call(purpose, conf.item, CONTROLLER):
            self.at_tick(self._invoke, conf, not_before=self.now + self.cfg.agents.health_check)
            return
        self.world.clock.call_later(self.cfg.agents.test_gen_seconds, self.at_tick, self._generated, conf)

    def _generated(self, conf: _Confirm) -> None:
        rr = self.world.rr
        if rr.uniform("broken", conf.vid, conf.gen) >= self.cfg.agents.p_broken:
            self._run_test(conf)
            return
        artifact = f"test:{conf.vid}:{conf.gen}"
        diag = generate_diagnostic(pick_failure_class(self.world, artifact), rr.fork("diag", artifact))
        self.world.emit(EventKind.REPAIR_NEEDED, artifact=artifact, failure_type=classify_failure(diag).value,
                        contract=conf.contract, work_item=conf.item)
        rank = self.plan.rank(conf.contract)
        pending = [self.plan.risk.get(c, 0.0) for c, _ in self.tasks[self.next_task:] if c != conf.contract]
        ctx = PlanContext(rank, len(self.plan.entries), max(pending, default=0.0))
        mission = self.plan.risk.get(conf.contract, 0.0) or 0.5
        conf.repair = RepairJob(artifact, conf.contract, conf.vid, diag, ctx, mission)
        self._start_repair(conf)

    def _start_repair(self, conf: _Confirm) -> None:
        """Launch a fresh repair incarnation once the repair node is reachable."""
        job = conf.repair
        inc = job.incarnation
        part = self.world.faults.partition(CONTROLLER, REPAIR_NODE, self.now)
        if part is not None:
            self.world.disrupt(part, conf.item)
            self.at_tick(self._start_when_current, conf, inc, strict=True)
            return
        job.ticket = RepairTicket(job.artifact, job.contract, classify_failure(job.diagnostic),
                                  budget_remaining=self.cfg.repair.ticket_budget,
                                  mission_value=job.mission_value, diagnostic=job.diagnostic)
        job.last_heard = self.now
        self._repair_attempt(conf, inc, job.ticket)
        self.at_tick(self._watch_repair, conf, inc, strict=True)

    def _start_when_current(self, conf: _Confirm, inc: int) -> None:
        if inc == conf.repair.incarnation:
            self._start_repair(conf)

    def _repair_attempt(self, conf: _Confirm, inc: int, ticket: RepairTicket) -> None:
        """Runs on the repair node; reports each attempt back to the controller."""
        w, cfg = self.world, self.cfg.repair
        job = conf.repair
        idx = len(ticket.attempts)
        strategy = next_strategy(ticket, cfg)
        new, outcome = pfir_step(
            ticket, lambda t, k, s: w.rr.uniform("repair", t.artifact, k), cfg, job.ctx,
            lambda: w.llm_call("generative_repair", conf.item, REPAIR_NODE),
            lambda cost: w.debit(REPAIR_NODE, cost))
        if len(new.attempts) == idx:
            self._report(conf, inc, new, outcome)
            return
        last = new.attempts[-1]

        def finished():
            w.emit(EventKind.REPAIR_ATTEMPT, artifact=job.artifact, index=idx, strategy=last.strategy.value,
                   outcome=last.outcome, cost=last.cost, work_item=conf.item, incarnation=inc)
            self._report(conf, inc, new, outcome)
            if outcome is None:
                self._repair_attempt(conf, inc, new)

        w.clock.call_later(cfg.seconds(strategy), finished)

    def _report(self, conf: _Confirm, inc: int, ticket: RepairTicket, outcome) -> None:
        job = conf.repair
        if inc != job.incarnation or job.done:
            return
        if self.world.faults.partition(REPAIR_NODE, CONTROLLER, self.now) is not None:
            return  # status update lost
        job.last_heard = self.now
        job.ticket = ticket
        if outcome is not None:
            job.done = True
            self.at_tick(self._repair_finished, conf, outcome)

    def _watch_repair(self, conf: _Confirm, inc: int) -> None:
        job = conf.repair
        if job.done or inc != job.incarnation:
            return
        if self.now - job.last_heard > self.cfg.agents.repair_timeout:
            # silent worker: presumed dead, its iterations are lost
            part = self.world.faults.partition(CONTROLLER, REPAIR_NODE, self.now)
            self.world.emit(EventKind.REPAIR_RESTARTED, artifact=job.artifact, work_item=conf.item,
                            lost_attempts=len(job.ticket.attempts), incarnation=inc)
            if part is not None:
                self.world.disrupt(part, conf.item)
            conf.restarts += 1
            job.incarnation += 1  # orphan the old incarnation; it keeps running unseen
            self._start_repair(conf)
            return
        self.at_tick(self._watch_repair, conf, inc, strict=True)

    def _repair_finished(self, conf: _Confirm, outcome) -> None:
        if outcome.repaired:
            self._run_test(conf)
        else:
            self.world.complete(conf.item, "abandoned", vulnerability=conf.vid)

    def _run_test(self, conf: _Confirm) -> None:
        self.world.clock.call_later(self.cfg.agents.test_run_seconds, self.at_tick, self._tested, conf)

    def _tested(self, conf: _Confirm) -> None:
        if conf.vid in self.truth or self.world.rr.uniform("fp-confirm", conf.vid) < self.cfg.agents.fp_confirm:
            self.world.emit(EventKind.VULN_STATUS, vulnerability=conf.vid, status="confirmed")
            self.world.complete(conf.item, "confirmed", vulnerability=conf.vid)
        else:
            self.world.complete(conf.item, "refuted", vulnerability=conf.vid)

    def run(self) -> RunResult:
        clock = self.world.clock
        clock.call_later(0.0, self._dispatch)
        reason = "complete"
        while (nxt := clock.next_at()) is not None:
            if nxt > self.cfg.horizon:
                reason = "horizon"
                break
            clock.step()
        last = self.world.log.records[-1]["timestamp"]
        self.world.emit(EventKind.RUN_ENDED, reason=reason, deadlock=False, last_activity=last,
                        variant=self.variant, seed=self.seed)
        self.result = RunResult(self.variant, self.seed, self.world, reason, False, self)
        return self.result


class PipelineEngine:
    """Fixed order, fixed tools, no retries: a failed tool ends its stage for the run."""

    def __init__(self, cfg, seed: int | None = None, variant: str | None = None):
        self.variant = variant or cfg.architecture.variant
        self.seed = cfg.seed if seed is None else int(seed)
        self.cfg = cfg
        self.world = World(cfg, self.seed, cfg.agents.agent_ids())
        self.tasks = [(c, m) for c in sorted(self.world.corpus) for m in cfg.agents.tools]
        self.halted: set[str] = set()
        self.confirmed: set[str] = set()
        self.running: dict | None = None
        self.index = 0
        self.world.fault_listeners.append(self._on_fault)

    def _next(self) -> None:
        w = self.world
        while self.index < len(self.tasks):
            c, m = self.tasks[self.index]
            self.index += 1
            if m in self.halted:
                continue
            tool = f"{m}-1"
            item = f"task:{c}:{m}"
            fault = w.tool_fault(tool)
            if fault is not None:
                self._halt(m, tool, item, fault)
                continue
            self.running = {"contract": c, "modality": m, "tool": tool, "item": item, "aborted": False}
            w.clock.call_later(w.tools[tool].profile.runtime, self._done, self.running)
            return

    def _halt(self, m: str, tool: str, item: str, fault: Fault) -> None:
        err = "crash" if fault.kind is FaultKind.TOOL_CRASH else "timeout"
        self.world.emit(EventKind.TOOL_FAILED, tool=tool, error=err)
        self.world.disrupt(fault, item)
        self.halted.add(m)

    def _on_fault(self, fault: Fault, starting: bool) -> None:
        job = self.running
        if starting and job is not None and fault.target == job["tool"]:
            job["aborted"] = True
            self.running = None
            self._halt(job["modality"], job["tool"], job["item"], fault)
            self._next()

    def _done(self, job: dict) -> None:
        if job["aborted"]:
            return
        self.running = None
        w = self.world
        tool = w.tools[job["tool"]]
        for f in scan(tool.profile, w.corpus[job["contract"]], w.rr):
            w.emit(EventKind.VULN_DETECTED, vulnerability=f.payload(tool.id), contract=f.contract)
            if f.vulnerability not in self.confirmed:
                # no independent evidence step: every report is taken as confirmed
                self.confirmed.add(f.vulnerability)
                w.emit(EventKind.VULN_STATUS, vulnerability=f.vulnerability, status="confirmed")
        w.complete(job["item"], contract=job["contract"], modality=job["modality"])
        self._next()

    def run(self) -> RunResult:
        clock = self.world.clock
        clock.call_later(0.0, self._next)
        reason = "complete"
        while (nxt := clock.next_at()) is not None:
            if nxt > self.cfg.horizon:
                reason = "horizon"
                break
            clock.step()
        last = self.world.log.records[-1]["timestamp"]
        self.world.emit(EventKind.RUN_ENDED, reason=reason, deadlock=False, last_activity=last,
                        variant=self.variant, seed=self.seed, halted=sorted(self.halted))
        return RunResult(self.variant, self.seed, self.world, reason, False, self)


ENGINES = {
    "FullMAS": MASEngine,
    "NoProtocols": MASEngine,
    "NoSelfHealing": MASEngine,
    "CentralizedScheduler": CentralizedEngine,
    # without autonomy the agents wait to be polled: the same controller model
    "NoAutonomy": CentralizedEngine,
    "SequentialPipeline": PipelineEngine,
    "RigidPipeline": PipelineEngine,
}


def run_variant(cfg, variant: str | None = None, seed: int | None = None) -> RunResult:
    if variant is not None:
        cfg = cfg.variant(variant)
    name = cfg.architecture.variant
    try:
        engine = ENGINES[name]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}") from None
    return engine(cfg, seed).run()
