"""The simulated world shared by every architecture: clock, log, faults, broker, LLM."""

from __future__ import annotations

import dataclasses
import itertools
import logging
from collections import defaultdict
from collections.abc import Callable, Iterable

from auditmas.domain import (
    BROADCAST, EventKind, EventLog, Message, ResourceBudget, ToolDescriptor, initial_state,
)
from auditmas.sim.clock import VirtualClock
from auditmas.sim.corpus import generate_corpus
from auditmas.sim.faults import Fault, FaultKind, FaultSchedule
from auditmas.sim.rng import RunRandom
from auditmas.sim.tools import SimulatedTool

logger = logging.getLogger(__name__)


class World:
    def __init__(self, cfg, seed: int, agent_ids: Iterable[str]):
        self.cfg = cfg
        self.seed = int(seed)
        self.rr = RunRandom(seed)
        self.clock = VirtualClock()
        self.corpus = generate_corpus(cfg.corpus, seed)
        self.agent_ids = list(agent_ids)
        a = cfg.agents
        self.tools: dict[str, SimulatedTool] = {}
        for i in range(1, a.n_command + 1):
            for m, prof in a.tools.items():
                self.tools[f"{m}-{i}"] = SimulatedTool(f"{m}-{i}", prof, f"cmd-{i}")
        state = initial_state(
            self.corpus.values(),
            [ToolDescriptor(t.id, t.modality) for t in self.tools.values()],
            ResourceBudget(llm_budget=a.llm_budget, time_budget=cfg.horizon, compute_budget=0.0),
        )
        self.log = EventLog(state)
        self.faults: FaultSchedule = cfg.faults
        self.faults.validate(self.agent_ids, self.tools)
        self._disrupted: set[tuple[str, str]] = set()
        self.fault_listeners: list[Callable[[Fault, bool], None]] = []
        for f in self.faults:
            self.clock.schedule(f.start, self._fault_edge, f, True, label="fault")
            self.clock.schedule(f.end, self._fault_edge, f, False, label="fault")

    @property
    def now(self) -> float:
        return self.clock.now

    def emit(self, kind: EventKind, /, **payload):
        return self.log.emit(kind, self.clock.now, **payload)

    def _fault_edge(self, fault: Fault, starting: bool) -> None:
        self.emit(EventKind.FAULT_STARTED if starting else EventKind.FAULT_ENDED,
                  fault_id=fault.id, fault_kind=fault.kind.value, target=fault.target)
        if not starting and fault.kind in (FaultKind.TOOL_CRASH, FaultKind.TIMEOUT_INJECTION):
            tool = self.log.state.tools.get(fault.target)
            if tool is not None and tool.status == "failed" and not self.faults.tool_down(tool.id, self.now):
                self.emit(EventKind.TOOL_RECOVERED, tool=tool.id)
        for listener in self.fault_listeners:
            listener(fault, starting)

    def disrupt(self, fault: Fault | None, item: str | None) -> None:
        if fault is None or not item or (fault.id, item) in self._disrupted:
            return
        self._disrupted.add((fault.id, item))
        self.emit(EventKind.DISRUPTED, fault_id=fault.id, work_item=item, fault_start=fault.start)

    def complete(self, item: str, outcome: str = "done", **extra) -> None:
        self.emit(EventKind.TASK_COMPLETED, work_item=item, outcome=outcome, **extra)

    def tool_fault(self, tool: str) -> Fault | None:
        return self.faults.tool_down(tool, self.now)

    def llm_call(self, purpose: str, item: str, agent: str) -> bool:
        """One generative invocation; fails while an outage is active."""
        down = self.faults.llm_down(self.now)
        self.emit(EventKind.LLM_INVOKED, purpose=purpose, work_item=item, agent=agent, ok=down is None)
        if down is not None:
            self.disrupt(down, item)
        return down is None

    def debit(self, agent: str, amount: float, resource_type: str = "llm") -> bool:
        """Direct budget debit (architectures without auctions)."""
        if self.log.state.resources.available(resource_type) < amount:
            return False
        self.emit(EventKind.RESOURCE_ALLOCATED, agent=agent, resource_type=resource_type, amount=amount)
        return True


class SimBroker:
    """Deterministic message transport with per-pair FIFO and fault injection.

    A message crossing an active partition is held at the receiver side and
    released, in send order, when the partition heals; later messages on the
    same pair queue behind held ones so FIFO is preserved.
    """

    def __init__(self, world: World, deliver: Callable[[Message], None]):
        self.world = world
        self.deliver_cb = deliver
        self.latency = world.cfg.agents.latency
        self.held: dict[tuple[str, str], list[Message]] = defaultdict(list)
        self._release_pending: set[tuple[str, str]] = set()
        self._seq = itertools.count(1)
        self.dead_letters: list[Message] = []

    def send(self, msg: Message) -> list[Message]:
        w = self.world
        if msg.receiver == BROADCAST:
            receivers = [a for a in w.agent_ids if a != msg.sender]
        else:
            receivers = [msg.receiver]
        out = []
        for r in receivers:
            m = dataclasses.replace(msg, receiver=r, sent_at=w.now, seq=next(self._seq))
            w.log.message(m)
            out.append(m)
            if r not in w.agent_ids:
                w.emit(EventKind.MESSAGE_DROPPED, seq=m.seq, reason="dead_letter")
                self.dead_letters.append(m)
                continue
            lost = w.faults.loss(m, w.now)
            if lost is not None and w.rr.uniform("loss", lost.id, m.seq) < lost.rate:
                w.emit(EventKind.MESSAGE_DROPPED, seq=m.seq, reason="loss", fault_id=lost.id)
                w.disrupt(lost, m.content.get("work_item"))
                continue
            w.clock.call_later(self.latency, self._arrive, m, label="deliver")
        return out

    def _arrive(self, m: Message) -> None:
        w = self.world
        pair = (m.sender, m.receiver)
        part = w.faults.partition(m.sender, m.receiver, w.now)
        if part is not None or self.held[pair]:
            self.held[pair].append(m)
            if part is not None:
                w.disrupt(part, m.content.get("work_item"))
            self._schedule_release(pair, part.end if part is not None else w.now)
            return
        self._deliver(m)

    def _schedule_release(self, pair, at: float) -> None:
        if pair not in self._release_pending:
            self._release_pending.add(pair)
            self.world.clock.schedule(at, self._release, pair, label="heal")

    def _release(self, pair) -> None:
        self._release_pending.discard(pair)
        w = self.world
        part = w.faults.partition(pair[0], pair[1], w.now)
        if part is not None:
            self._schedule_release(pair, part.end)
            return
        held, self.held[pair] = self.held[pair], []
        for m in held:
            self._deliver(m)

    def _deliver(self, m: Message) -> None:
        self.world.emit(EventKind.MESSAGE_DELIVERED, seq=m.seq)
        self.deliver_cb(m)

    def reachable(self, a: str, b: str) -> bool:
        return self.world.faults.partition(a, b, self.world.now) is None

    def call(self, msg: Message) -> bool:
        """Synchronous direct call: logged as a call record, fails under partition or loss."""
        w = self.world
        m = dataclasses.replace(msg, sent_at=w.now)
        w.log.call(m)
        part = w.faults.partition(m.sender, m.receiver, w.now)
        if part is not None:
            w.disrupt(part, m.content.get("work_item"))
            return False
        lost = w.faults.loss(m, w.now)
        if lost is not None:
            key = len(w.log.records)
            if w.rr.uniform("loss-call", lost.id, key) < lost.rate:
                w.disrupt(lost, m.content.get("work_item"))
                return False
        return True
