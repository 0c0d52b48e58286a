"""Shared state space, events, messages and the transition function.

The event log is the single source of truth: every state change in a run is an
:class:`Event` applied through :func:`apply_event`, and a final
:class:`SystemState` can always be rebuilt by replaying the log.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, TextIO

logger = logging.getLogger(__name__)

SEVERITIES = ("critical", "high", "medium", "low")
STATUS_ORDER = {"detected": 0, "confirmed": 1, "repaired": 2}
BROADCAST = "*"


class EventKind(str, Enum):
    # the six kinds of the formal model
    VULN_DETECTED = "VULN_DETECTED"
    RISK_CHANGED = "RISK_CHANGED"
    TOOL_FAILED = "TOOL_FAILED"
    REPAIR_NEEDED = "REPAIR_NEEDED"
    RESOURCE_REQUESTED = "RESOURCE_REQUESTED"
    TIMEOUT = "TIMEOUT"
    # state-changing extensions needed for exact replay
    VULN_STATUS = "VULN_STATUS"
    RESOURCE_ALLOCATED = "RESOURCE_ALLOCATED"
    TOOL_RECOVERED = "TOOL_RECOVERED"
    PROTOCOL_OPENED = "PROTOCOL_OPENED"
    PROTOCOL_CLOSED = "PROTOCOL_CLOSED"
    MESSAGE_DELIVERED = "MESSAGE_DELIVERED"
    MESSAGE_DROPPED = "MESSAGE_DROPPED"
    # bookkeeping records, no state effect
    RUN_STARTED = "RUN_STARTED"
    RUN_ENDED = "RUN_ENDED"
    FAULT_STARTED = "FAULT_STARTED"
    FAULT_ENDED = "FAULT_ENDED"
    TASK_COMPLETED = "TASK_COMPLETED"
    DISRUPTED = "DISRUPTED"
    REPAIR_ATTEMPT = "REPAIR_ATTEMPT"
    REPAIR_RESTARTED = "REPAIR_RESTARTED"
    LLM_INVOKED = "LLM_INVOKED"
    MANUAL_INTERVENTION = "MANUAL_INTERVENTION"
    NEGOTIATION_OUTCOME = "NEGOTIATION_OUTCOME"
    DEADLOCK = "DEADLOCK"


class Performative(str, Enum):
    INFORM = "INFORM"
    PROPOSE = "PROPOSE"
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"
    CFP = "CFP"
    BID = "BID"
    AWARD = "AWARD"
    OPEN = "OPEN"
    ALLOCATE = "ALLOCATE"
    EXECUTE = "EXECUTE"
    REPAIR_NEEDED = "REPAIR_NEEDED"
    FAILURE = "FAILURE"


# OPEN is the resource-auction spelling of CFP, ALLOCATE of AWARD.
PERFORMATIVE_SYNONYMS = {Performative.OPEN: Performative.CFP, Performative.ALLOCATE: Performative.AWARD}


def canonical_performative(p: Performative) -> Performative:
    return PERFORMATIVE_SYNONYMS.get(p, p)


PAYLOAD_FIELDS: dict[EventKind, tuple[str, ...]] = {
    EventKind.VULN_DETECTED: ("vulnerability", "contract"),
    EventKind.RISK_CHANGED: ("contract", "delta"),
    EventKind.TOOL_FAILED: ("tool", "error"),
    EventKind.REPAIR_NEEDED: ("artifact", "failure_type"),
    EventKind.RESOURCE_REQUESTED: ("agent", "resource_type", "amount"),
    EventKind.TIMEOUT: ("protocol_id",),
    EventKind.VULN_STATUS: ("vulnerability", "status"),
    EventKind.RESOURCE_ALLOCATED: ("agent", "resource_type", "amount"),
    EventKind.TOOL_RECOVERED: ("tool",),
    EventKind.PROTOCOL_OPENED: ("protocol_id", "kind", "deadline"),
    EventKind.PROTOCOL_CLOSED: ("protocol_id", "outcome"),
    EventKind.MESSAGE_DELIVERED: ("seq",),
    EventKind.MESSAGE_DROPPED: ("seq", "reason"),
}


class EventRejected(ValueError):
    """An event that names unknown entities or violates an invariant."""


class BudgetError(ValueError):
    """A debit that would drive a budget negative."""


@dataclass(frozen=True)
class GroundTruthVuln:
    vclass: str
    severity: str


@dataclass(frozen=True)
class Contract:
    id: str
    complexity: float
    dependencies: frozenset[str] = frozenset()
    test_coverage: float = 0.0
    ground_truth_vulns: tuple[GroundTruthVuln, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.complexity <= 1.0:
            raise ValueError(f"complexity out of [0,1]: {self.complexity}")
        if not 0.0 <= self.test_coverage <= 1.0:
            raise ValueError(f"test_coverage out of [0,1]: {self.test_coverage}")
        if self.id in self.dependencies:
            raise ValueError(f"contract {self.id} depends on itself")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "complexity": self.complexity,
            "dependencies": sorted(self.dependencies),
            "test_coverage": self.test_coverage,
            "ground_truth_vulns": [[v.vclass, v.severity] for v in self.ground_truth_vulns],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> Contract:
        return cls(
            id=d["id"],
            complexity=d["complexity"],
            dependencies=frozenset(d["dependencies"]),
            test_coverage=d["test_coverage"],
            ground_truth_vulns=tuple(GroundTruthVuln(c, s) for c, s in d["ground_truth_vulns"]),
        )


def check_corpus(contracts: Mapping[str, Contract]) -> None:
    for c in contracts.values():
        missing = c.dependencies - contracts.keys()
        if missing:
            raise ValueError(f"{c.id} depends on unknown contracts {sorted(missing)}")


@dataclass(frozen=True)
class Vulnerability:
    id: str
    severity: str
    contract: str
    status: str = "detected"
    detecting_tool: str = ""
    confidence: float = 0.0
    vclass: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ToolDescriptor:
    id: str
    modality: str
    status: str = "up"


@dataclass(frozen=True)
class ResourceBudget:
    llm_budget: float = 0.0
    time_budget: float = 0.0
    compute_budget: float = 0.0

    def __post_init__(self):
        for name in ("llm_budget", "time_budget", "compute_budget"):
            if getattr(self, name) < 0:
                raise BudgetError(f"{name} negative")

    def debit(self, resource_type: str, amount: float) -> ResourceBudget:
        key = _budget_key(resource_type)
        if amount < 0:
            raise BudgetError("negative debit")
        left = getattr(self, key) - amount
        if left < 0:
            raise BudgetError(f"{key} insufficient: {getattr(self, key)} < {amount}")
        return dataclasses.replace(self, **{key: left})

    def available(self, resource_type: str) -> float:
        return getattr(self, _budget_key(resource_type))


def _budget_key(resource_type: str) -> str:
    key = resource_type if resource_type.endswith("_budget") else f"{resource_type}_budget"
    if key not in ("llm_budget", "time_budget", "compute_budget"):
        raise BudgetError(f"unknown resource type {resource_type!r}")
    return key


@dataclass(frozen=True)
class Event:
    kind: EventKind
    payload: Mapping[str, Any]
    timestamp: float

    def validate(self) -> None:
        need = PAYLOAD_FIELDS.get(self.kind, ())
        missing = [k for k in need if k not in self.payload]
        if missing:
            raise EventRejected(f"{self.kind.value} payload missing {missing}")
        if self.kind is EventKind.RISK_CHANGED and not -1.0 <= self.payload["delta"] <= 1.0:
            raise EventRejected("RISK_CHANGED delta outside [-1, 1]")

    def to_record(self) -> dict:
        return {
            "type": "event",
            "timestamp": self.timestamp,
            "kind": self.kind.value,
            "sender": None,
            "receiver": None,
            "conversation_id": self.payload.get("protocol_id"),
            "payload": dict(self.payload),
        }


@dataclass(frozen=True)
class Message:
    performative: Performative
    sender: str
    receiver: str
    content: Mapping[str, Any] = field(default_factory=dict)
    conversation_id: str | None = None
    sent_at: float = 0.0
    seq: int = -1

    def to_record(self, record_type: str = "message") -> dict:
        return {
            "type": record_type,
            "timestamp": self.sent_at,
            "kind": self.performative.value,
            "sender": self.sender,
            "receiver": self.receiver,
            "conversation_id": self.conversation_id,
            "payload": dict(self.content),
            "seq": self.seq,
        }

    @classmethod
    def from_record(cls, r: Mapping) -> Message:
        return cls(
            performative=Performative(r["kind"]),
            sender=r["sender"],
            receiver=r["receiver"],
            content=r["payload"],
            conversation_id=r["conversation_id"],
            sent_at=r["timestamp"],
            seq=r.get("seq", -1),
        )


@dataclass(frozen=True)
class SystemState:
    contracts: Mapping[str, Contract]
    tools: Mapping[str, ToolDescriptor]
    vulnerabilities: Mapping[str, Vulnerability] = field(default_factory=dict)
    resources: ResourceBudget = ResourceBudget()
    message_queue: Mapping[int, Message] = field(default_factory=dict)
    protocols: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "contracts": [c.to_dict() for c in sorted(self.contracts.values(), key=lambda c: c.id)],
            "tools": [dataclasses.asdict(t) for t in sorted(self.tools.values(), key=lambda t: t.id)],
            "vulnerabilities": [
                v.to_dict() for v in sorted(self.vulnerabilities.values(), key=lambda v: v.id)
            ],
            "resources": dataclasses.asdict(self.resources),
            "message_queue": [m.to_record() for _, m in sorted(self.message_queue.items())],
            "protocols": dict(sorted(self.protocols.items())),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> SystemState:
        return cls(
            contracts={c["id"]: Contract.from_dict(c) for c in d["contracts"]},
            tools={t["id"]: ToolDescriptor(**t) for t in d["tools"]},
            vulnerabilities={v["id"]: Vulnerability(**v) for v in d["vulnerabilities"]},
            resources=ResourceBudget(**d["resources"]),
            message_queue={m["seq"]: Message.from_record(m) for m in d["message_queue"]},
            protocols=dict(d["protocols"]),
        )


def initial_state(contracts: Iterable[Contract], tools: Iterable[ToolDescriptor],
                  resources: ResourceBudget) -> SystemState:
    cmap = {c.id: c for c in contracts}
    check_corpus(cmap)
    return SystemState(contracts=cmap, tools={t.id: t for t in tools}, resources=resources)


def apply_event(state: SystemState, event: Event, errors: list | None = None) -> SystemState:
    """Transition function over events.

    Rejected events (malformed payload, unknown contract/tool/protocol, budget
    underflow, status regression) leave the state unchanged; the reason is
    logged and appended to ``errors`` when given.
    """
    try:
        event.validate()
        return _transition(state, event)
    except (EventRejected, BudgetError) as exc:
        logger.warning("rejected %s at t=%s: %s", event.kind.value, event.timestamp, exc)
        if errors is not None:
            errors.append({"timestamp": event.timestamp, "kind": event.kind.value, "error": str(exc)})
        return state


def _transition(state: SystemState, event: Event) -> SystemState:
    p = event.payload
    kind = event.kind
    replace = dataclasses.replace

    if kind is EventKind.VULN_DETECTED:
        if p["contract"] not in state.contracts:
            raise EventRejected(f"unknown contract {p['contract']}")
        v = p["vulnerability"]
        tool = v.get("detecting_tool", "")
        if tool and tool not in state.tools:
            raise EventRejected(f"unknown tool {tool}")
        if v["id"] in state.vulnerabilities:
            return state
        vuln = Vulnerability(
            id=v["id"], severity=v["severity"], contract=p["contract"], status="detected",
            detecting_tool=tool, confidence=v.get("confidence", 0.0), vclass=v.get("vclass", ""),
        )
        if vuln.severity not in SEVERITIES:
            raise EventRejected(f"bad severity {vuln.severity}")
        return replace(state, vulnerabilities={**state.vulnerabilities, vuln.id: vuln})

    if kind is EventKind.VULN_STATUS:
        vid, status = p["vulnerability"], p["status"]
        old = state.vulnerabilities.get(vid)
        if old is None:
            raise EventRejected(f"unknown vulnerability {vid}")
        if STATUS_ORDER.get(status, -1) < STATUS_ORDER[old.status]:
            raise EventRejected(f"status regression {old.status} -> {status}")
        if status == old.status:
            return state
        return replace(state, vulnerabilities={**state.vulnerabilities, vid: replace(old, status=status)})

    if kind is EventKind.RISK_CHANGED:
        if p["contract"] not in state.contracts:
            raise EventRejected(f"unknown contract {p['contract']}")
        return state

    if kind in (EventKind.TOOL_FAILED, EventKind.TOOL_RECOVERED):
        tool = state.tools.get(p["tool"])
        if tool is None:
            raise EventRejected(f"unknown tool {p['tool']}")
        status = "failed" if kind is EventKind.TOOL_FAILED else "up"
        if tool.status == status:
            return state
        return replace(state, tools={**state.tools, tool.id: replace(tool, status=status)})

    if kind is EventKind.RESOURCE_ALLOCATED:
        return replace(state, resources=state.resources.debit(p["resource_type"], p["amount"]))

    if kind is EventKind.PROTOCOL_OPENED:
        return replace(state, protocols={**state.protocols, p["protocol_id"]: "open"})

    if kind in (EventKind.TIMEOUT, EventKind.PROTOCOL_CLOSED):
        pid = p["protocol_id"]
        if pid not in state.protocols:
            raise EventRejected(f"unknown protocol {pid}")
        if state.protocols[pid] != "open":
            return state
        outcome = "expired" if kind is EventKind.TIMEOUT else p["outcome"]
        return replace(state, protocols={**state.protocols, pid: outcome})

    if kind in (EventKind.MESSAGE_DELIVERED, EventKind.MESSAGE_DROPPED):
        if p["seq"] not in state.message_queue:
            raise EventRejected(f"no pending message {p['seq']}")
        queue = dict(state.message_queue)
        del queue[p["seq"]]
        return replace(state, message_queue=queue)

    # REPAIR_NEEDED, RESOURCE_REQUESTED and bookkeeping kinds carry no state change
    return state


def enqueue_message(state: SystemState, message: Message) -> SystemState:
    return dataclasses.replace(state, message_queue={**state.message_queue, message.seq: message})


class EventLog:
    """Append-only run log that keeps the derived state in sync.

    Records are plain dicts with the line-delimited JSON layout (timestamp,
    kind, sender, receiver, conversation_id, payload).
    """

    def __init__(self, state: SystemState):
        self.initial = state
        self.state = state
        self.records: list[dict] = []
        self.errors: list[dict] = []
        self._last_t = 0.0
        self.records.append({
            "type": "event", "timestamp": 0.0, "kind": EventKind.RUN_STARTED.value,
            "sender": None, "receiver": None, "conversation_id": None,
            "payload": {"initial_state": state.to_dict()},
        })

    def emit(self, kind: EventKind, timestamp: float, /, **payload) -> Event:
        if timestamp < self._last_t:
            raise ValueError(f"event log time went backwards: {timestamp} < {self._last_t}")
        self._last_t = timestamp
        record = json.loads(json.dumps(Event(kind, payload, timestamp).to_record()))
        event = Event(kind, record["payload"], timestamp)
        self.records.append(record)
        self.state = apply_event(self.state, event, self.errors)
        return event

    def message(self, message: Message) -> None:
        # round-trip through JSON so the live queue equals a replayed one
        record = json.loads(json.dumps(message.to_record()))
        self.records.append(record)
        self.state = enqueue_message(self.state, Message.from_record(record))

    def call(self, message: Message) -> None:
        """Direct synchronous call: logged, never queued."""
        self.records.append(message.to_record("call"))

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())


def read_log(source: str | Path | TextIO) -> list[dict]:
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text()
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def replay(records: Iterable[Mapping], initial: SystemState | None = None) -> SystemState:
    """Rebuild the final state from a log (and its RUN_STARTED snapshot)."""
    state = initial
    for r in records:
        if r["type"] == "message":
            state = enqueue_message(state, Message.from_record(r))
        elif r["type"] == "event":
            kind = EventKind(r["kind"])
            if kind is EventKind.RUN_STARTED:
                if state is None:
                    state = SystemState.from_dict(r["payload"]["initial_state"])
                continue
            state = apply_event(state, Event(kind, r["payload"], r["timestamp"]))
    if state is None:
        raise ValueError("log has no RUN_STARTED record and no initial state was given")
    return state


def iter_events(records: Iterable[Mapping], *kinds: EventKind) -> Iterator[Mapping]:
    names = {k.value for k in kinds}
    for r in records:
        if r["type"] == "event" and (not names or r["kind"] in names):
            yield r
