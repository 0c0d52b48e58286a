"""Timeout-bounded coordination protocols.

Three finite-state machines (plan negotiation, contract net, resource auction)
plus the escalation sub-protocol a stalled negotiation spawns at the
coordinator. Every instance carries a virtual-time deadline; :func:`expire`
forces it terminal, which is what bounds every trace.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Protocol

from auditmas.domain import Event, EventKind, Message, Performative, ResourceBudget

logger = logging.getLogger(__name__)

THETA = 0.15
H_MAX = 5
NESTED_LIMIT = 45.0
CAPABILITY_WEIGHT = 0.7
AVAILABILITY_WEIGHT = 0.3


class ProtocolKind(str, Enum):
    PLAN_NEGOTIATION = "PlanNegotiation"
    CONTRACT_NET = "ContractNet"
    RESOURCE_AUCTION = "ResourceAuction"
    ESCALATION = "Escalation"


TIMEOUTS = {
    ProtocolKind.PLAN_NEGOTIATION: 30.0,
    ProtocolKind.CONTRACT_NET: 10.0,
    ProtocolKind.RESOURCE_AUCTION: 15.0,
    ProtocolKind.ESCALATION: 15.0,
}


class FsmState(str, Enum):
    OPEN = "open"
    PROPOSED = "proposed"
    AGREED = "agreed"
    UNCHANGED = "unchanged"
    ESCALATED = "escalated"
    AWARDED = "awarded"
    NO_AWARD = "no_award"
    ALLOCATED = "allocated"
    ALL_REJECTED = "all_rejected"
    RESOLVED = "resolved"
    EXPIRED = "expired"


TERMINAL = frozenset(FsmState) - {FsmState.OPEN, FsmState.PROPOSED}


class NoBids(ValueError):
    pass


@dataclass(frozen=True)
class Bid:
    bidder: str
    capability: float = 0.0
    availability: float = 0.0
    urgency: float = 0.0
    benefit: float = 0.0
    cost: float = 1.0

    def __post_init__(self):
        for name in ("capability", "availability", "urgency", "benefit"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"bid {name} out of [0,1]: {v}")
        if self.cost <= 0:
            raise ValueError(f"bid cost must be positive: {self.cost}")

    @property
    def score(self) -> float:
        return CAPABILITY_WEIGHT * self.capability + AVAILABILITY_WEIGHT * self.availability

    @property
    def efficiency(self) -> float:
        return self.urgency * self.benefit / self.cost

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ProtocolInstance:
    id: str
    kind: ProtocolKind
    initiator: str
    participants: tuple[str, ...]
    started_at: float
    deadline: float
    state: FsmState = FsmState.OPEN
    history_length: int = 0
    parent: str | None = None
    root_started_at: float | None = None
    bids: tuple[Bid, ...] = ()
    outcome: Any = None
    ended_at: float | None = None
    child: ProtocolInstance | None = None
    content: Mapping[str, Any] = field(default_factory=dict)

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL

    def finish(self, state: FsmState, now: float, outcome: Any = None) -> ProtocolInstance:
        return dataclasses.replace(self, state=state, ended_at=now, outcome=outcome)


def new_instance(pid: str, kind: ProtocolKind, initiator: str, participants: Iterable[str],
                 now: float, parent: ProtocolInstance | None = None,
                 content: Mapping | None = None) -> ProtocolInstance:
    deadline = now + TIMEOUTS[kind]
    root_start = now
    if parent is not None:
        root_start = parent.root_started_at if parent.root_started_at is not None else parent.started_at
        deadline = min(deadline, root_start + NESTED_LIMIT)
    return ProtocolInstance(
        id=pid, kind=kind, initiator=initiator, participants=tuple(participants),
        started_at=now, deadline=deadline, parent=parent.id if parent else None,
        root_started_at=root_start, content=dict(content or {}),
    )


def _msg(perf: Performative, sender: str, receiver: str, inst: ProtocolInstance,
         now: float, **content) -> Message:
    return Message(perf, sender, receiver, content, inst.id, now)


# -- contract net ---------------------------------------------------------

def contract_net_winner(bids: Iterable[Bid]) -> Bid:
    """Highest 0.7*capability + 0.3*availability; ties go to the lowest bidder id."""
    bids = list(bids)
    if not bids:
        raise NoBids("no bids")
    return min(bids, key=lambda b: (-b.score, b.bidder))


def contract_net_round(cfp: ProtocolInstance, bids: Iterable[Bid] | None = None,
                       now: float | None = None) -> tuple[ProtocolInstance, list[Message]]:
    """Close a contract-net instance: AWARD the best bid, or end with no award."""
    bids = tuple(cfp.bids if bids is None else bids)
    now = cfp.deadline if now is None else now
    if cfp.terminal:
        return cfp, []
    if not bids:
        return cfp.finish(FsmState.NO_AWARD, now), []
    win = contract_net_winner(bids)
    inst = dataclasses.replace(cfp, bids=bids).finish(FsmState.AWARDED, now, win.bidder)
    return inst, [_msg(Performative.AWARD, cfp.initiator, win.bidder, inst, now,
                       score=win.score, **dict(cfp.content))]


def record_bid(inst: ProtocolInstance, bid: Bid) -> ProtocolInstance:
    if inst.terminal:
        logger.info("bid from %s for closed %s ignored", bid.bidder, inst.id)
        return inst
    if any(b.bidder == bid.bidder for b in inst.bids):
        return inst
    return dataclasses.replace(inst, bids=inst.bids + (bid,))


# -- resource auction -----------------------------------------------------

@dataclass(frozen=True)
class AuctionResult:
    allocations: tuple[tuple[str, float], ...]
    rejected: tuple[str, ...]
    budget: ResourceBudget
    ranking: tuple[tuple[str, float], ...]


def resource_auction_round(requests: Iterable[Bid], budget: ResourceBudget,
                           resource_type: str = "llm") -> AuctionResult:
    """Greedy all-or-nothing allocation by efficiency = urgency*benefit/cost.

    Bids are ranked by efficiency (ties: lower bidder id) and each is granted
    in full if it still fits the remaining budget; later, smaller bids may
    still fit after a larger one is refused.
    """
    ranked = sorted(requests, key=lambda b: (-b.efficiency, b.bidder))
    allocations, rejected = [], []
    for b in ranked:
        if b.cost <= budget.available(resource_type):
            budget = budget.debit(resource_type, b.cost)
            allocations.append((b.bidder, b.cost))
        else:
            rejected.append(b.bidder)
    return AuctionResult(tuple(allocations), tuple(rejected), budget,
                         tuple((b.bidder, b.efficiency) for b in ranked))


def auction_close(inst: ProtocolInstance, budget: ResourceBudget, now: float,
                  resource_type: str = "llm") -> tuple[ProtocolInstance, list[Message], AuctionResult]:
    result = resource_auction_round(inst.bids, budget, resource_type)
    state = FsmState.ALLOCATED if result.allocations else FsmState.ALL_REJECTED
    inst = inst.finish(state, now, {"allocations": [list(a) for a in result.allocations],
                                    "rejected": list(result.rejected)})
    out = [_msg(Performative.AWARD, inst.initiator, who, inst, now, amount=amount,
                resource_type=resource_type) for who, amount in result.allocations]
    out += [_msg(Performative.REJECT, inst.initiator, who, inst, now, resource_type=resource_type)
            for who in result.rejected]
    return inst, out, result


# -- plan negotiation -----------------------------------------------------

class NegotiationPolicy(Protocol):
    def assess(self, findings: Mapping[str, Any]) -> tuple[float, Mapping | None]:
        """Risk change caused by the findings and the plan to propose."""

    def respond(self, plan: Mapping) -> bool:
        """Whether the receiver of a PROPOSE accepts the plan."""

    def counter(self, plan: Mapping, reply: Mapping) -> Mapping:
        """Revised plan after a REJECT."""


def exceeds_threshold(delta: float, theta: float = THETA) -> bool:
    # rounding keeps 0.65 - 0.50 from counting as > 0.15
    return round(abs(delta), 9) > theta


def plan_negotiation_step(inst: ProtocolInstance, message: Message, now: float,
                          policy: NegotiationPolicy, theta: float = THETA,
                          coordinator: str = "coordinator") -> tuple[ProtocolInstance, list[Message]]:
    """Advance a plan negotiation by one received message.

    ``inst.participants`` is ``(executor, planner)``. INFORM is assessed by the
    planner, PROPOSE answered by the executor, REJECT countered by the planner
    until ``H_MAX`` proposals have been refused, at which point the instance
    escalates to the coordinator.
    """
    perf = message.performative
    if inst.terminal:
        if not (perf is Performative.ACCEPT and inst.state is FsmState.AGREED):
            logger.info("%s for closed negotiation %s ignored", perf.value, inst.id)
        return inst, []
    executor, planner = inst.participants[0], inst.participants[1]

    if perf is Performative.INFORM:
        delta, plan = policy.assess(message.content)
        if plan is None or not exceeds_threshold(delta, theta):
            return inst.finish(FsmState.UNCHANGED, now, {"delta": delta}), []
        inst = dataclasses.replace(inst, state=FsmState.PROPOSED,
                                   history_length=inst.history_length + 1,
                                   content={**inst.content, "delta": delta, "plan": plan})
        return inst, [_msg(Performative.PROPOSE, planner, executor, inst, now, plan=plan)]

    if perf is Performative.PROPOSE:
        plan = message.content["plan"]
        if policy.respond(plan):
            inst = inst.finish(FsmState.AGREED, now, {"plan": plan})
            return inst, [_msg(Performative.ACCEPT, executor, planner, inst, now)]
        return inst, [_msg(Performative.REJECT, executor, planner, inst, now,
                           **_reject_reason(policy, plan))]

    if perf is Performative.REJECT:
        if inst.history_length >= H_MAX:
            return escalate(inst, now, coordinator)
        plan = policy.counter(inst.content.get("plan", {}), message.content)
        inst = dataclasses.replace(inst, history_length=inst.history_length + 1,
                                   content={**inst.content, "plan": plan})
        return inst, [_msg(Performative.PROPOSE, planner, executor, inst, now, plan=plan)]

    if perf is Performative.ACCEPT:
        return inst.finish(FsmState.AGREED, now, {"plan": inst.content.get("plan")}), []

    logger.info("unexpected %s in negotiation %s", perf.value, inst.id)
    return inst, []


def _reject_reason(policy: Any, plan: Mapping) -> dict:
    reason = getattr(policy, "reject_reason", None)
    return dict(reason(plan)) if reason else {}


def escalate(inst: ProtocolInstance, now: float,
             coordinator: str = "coordinator") -> tuple[ProtocolInstance, list[Message]]:
    """Hand an unresolved negotiation to the coordinator as a nested instance."""
    planner = inst.participants[1]
    child = new_instance(f"{inst.id}.esc", ProtocolKind.ESCALATION, planner,
                         (coordinator, *inst.participants), now, parent=inst)
    candidates = [c for c in (inst.content.get("plan"), inst.content.get("current_plan")) if c]
    inst = dataclasses.replace(inst.finish(FsmState.ESCALATED, now), child=child)
    msg = Message(Performative.PROPOSE, planner, coordinator,
                  {"escalation_of": inst.id, "candidates": candidates}, child.id, now)
    return inst, [msg]


def risk_coverage(order: Sequence[str], risk: Mapping[str, float]) -> float:
    """Rank-discounted risk mass: sum of risk(c_k) / (k + 1)."""
    return sum(risk.get(c, 0.0) / (k + 1) for k, c in enumerate(order))


def resolve_escalation(candidates: Sequence[Mapping], risk: Mapping[str, float]) -> Mapping | None:
    """Coordinator's choice: the candidate plan with the higher risk coverage."""
    best, best_cov = None, float("-inf")
    for plan in candidates:
        cov = risk_coverage(plan.get("order", ()), risk)
        if cov > best_cov:
            best, best_cov = plan, cov
    return best


# -- timeouts -------------------------------------------------------------

def expire(inst: ProtocolInstance, now: float,
           coordinator: str = "coordinator") -> tuple[ProtocolInstance, list]:
    """Force a past-deadline instance terminal.

    Returns the TIMEOUT event (the initiator's notification) and, for a plan
    negotiation that never reached agreement, the escalation message.
    """
    if inst.terminal or now < inst.deadline:
        return inst, []
    out: list = [Event(EventKind.TIMEOUT, {"protocol_id": inst.id, "initiator": inst.initiator}, now)]
    if inst.kind is ProtocolKind.PLAN_NEGOTIATION and inst.state is FsmState.PROPOSED:
        inst, msgs = escalate(inst, now, coordinator)
        out += msgs
        return inst, out
    state = FsmState.NO_AWARD if inst.kind is ProtocolKind.CONTRACT_NET else FsmState.EXPIRED
    return inst.finish(state, now, "timeout"), out


class ProtocolRegistry:
    """Owns every live instance of a run; ids are deterministic per kind."""

    PREFIX = {
        ProtocolKind.PLAN_NEGOTIATION: "pn",
        ProtocolKind.CONTRACT_NET: "cn",
        ProtocolKind.RESOURCE_AUCTION: "ra",
        ProtocolKind.ESCALATION: "esc",
    }

    def __init__(self):
        self.instances: dict[str, ProtocolInstance] = {}
        self._counters = {k: itertools.count(1) for k in ProtocolKind}

    def open(self, kind: ProtocolKind, initiator: str, participants: Iterable[str], now: float,
             parent: ProtocolInstance | None = None, content: Mapping | None = None) -> ProtocolInstance:
        pid = f"{self.PREFIX[kind]}-{next(self._counters[kind]):05d}"
        inst = new_instance(pid, kind, initiator, participants, now, parent, content)
        self.instances[pid] = inst
        return inst

    def add(self, inst: ProtocolInstance) -> None:
        self.instances[inst.id] = inst

    def get(self, pid: str | None) -> ProtocolInstance | None:
        return self.instances.get(pid) if pid else None

    def update(self, inst: ProtocolInstance) -> ProtocolInstance | None:
        """Store ``inst``; returns a newly spawned child instance, if any."""
        self.instances[inst.id] = inst
        if inst.child is not None and inst.child.id not in self.instances:
            self.instances[inst.child.id] = inst.child
            return inst.child
        return None

    def open_instances(self, kind: ProtocolKind | None = None) -> list[ProtocolInstance]:
        return [i for i in self.instances.values()
                if not i.terminal and (kind is None or i.kind is kind)]

    def due(self, now: float) -> list[ProtocolInstance]:
        return sorted((i for i in self.instances.values() if not i.terminal and i.deadline <= now),
                      key=lambda i: (i.deadline, i.id))

    def chain_spans(self) -> dict[str, float]:
        """Root id -> time from root start to the end of its last descendant."""
        spans: dict[str, float] = {}
        for inst in self.instances.values():
            if inst.parent is None or inst.ended_at is None:
                continue
            root = inst
            while root.parent is not None:
                root = self.instances[root.parent]
            spans[root.id] = max(spans.get(root.id, 0.0), inst.ended_at - root.started_at)
        return spans
