"""Run metrics computed from an event log alone.

Every function takes the list of log records, so a written log can be
re-scored without re-running the simulation.
"""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field

from auditmas.domain import EventKind

MESSAGE_RECORDS = ("message", "call")


def _events(records, kind: EventKind):
    return (r for r in records if r["type"] == "event" and r["kind"] == kind.value)


class IncompleteRun(ValueError):
    """The log lacks its RUN_ENDED terminal record."""


def run_end(records: Sequence[Mapping]) -> Mapping:
    for r in reversed(records):
        if r["kind"] == EventKind.RUN_ENDED.value:
            return r["payload"]
    raise IncompleteRun("log has no RUN_ENDED record (incomplete run)")


def initial_state(records: Sequence[Mapping]) -> Mapping:
    return records[0]["payload"]["initial_state"]


def ground_truth(records: Sequence[Mapping]) -> dict[str, str]:
    """vulnerability id -> severity for every seeded vulnerability."""
    return {f"{c['id']}/{cls}": sev for c in initial_state(records)["contracts"]
            for cls, sev in c["ground_truth_vulns"]}


def confirmed(records) -> set[str]:
    return {r["payload"]["vulnerability"] for r in _events(records, EventKind.VULN_STATUS)
            if r["payload"]["status"] == "confirmed"}


def detection_quality(records, truth: Iterable[str] | None = None) -> tuple[float, float, float]:
    """Precision and recall of confirmed findings; both are 0 when nothing is confirmed."""
    truth = set(ground_truth(records) if truth is None else truth)
    found = confirmed(records)
    tp = len(found & truth)
    precision = tp / len(found) if found else 0.0
    recall = tp / len(truth) if truth else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def time_to_first_critical(records) -> float | None:
    """Time of the first VULN_DETECTED with critical severity that is later confirmed."""
    found = confirmed(records)
    times = [r["timestamp"] for r in _events(records, EventKind.VULN_DETECTED)
             if r["payload"]["vulnerability"]["severity"] == "critical"
             and r["payload"]["vulnerability"]["id"] in found]
    return min(times) if times else None


def recovery_times(records) -> list[float]:
    """Per disrupted work item: first completion after the disruption minus fault onset.

    Items never completed are censored at the run's last activity.
    """
    end = run_end(records)["last_activity"]
    completions: dict[str, list[float]] = defaultdict(list)
    for r in _events(records, EventKind.TASK_COMPLETED):
        completions[r["payload"]["work_item"]].append(r["timestamp"])
    out = []
    for r in _events(records, EventKind.DISRUPTED):
        p = r["payload"]
        done = [t for t in completions.get(p["work_item"], ()) if t >= r["timestamp"]]
        out.append((min(done) if done else end) - p["fault_start"])
    return out


def message_count(records) -> int:
    return sum(r["type"] in MESSAGE_RECORDS for r in records)


def llm_invocations_per_repair(records) -> float | None:
    calls = sum(r["payload"]["purpose"] in ("generative_repair", "regenerate")
                for r in _events(records, EventKind.LLM_INVOKED))
    needed = sum(1 for _ in _events(records, EventKind.REPAIR_NEEDED))
    return calls / needed if needed else None


@dataclass
class InstanceStats:
    id: str
    kind: str
    opened: float
    deadline: float
    parent: str | None = None
    closed: float | None = None
    outcome: str | None = None
    participants: tuple[str, ...] = ()
    messages: int = 0
    performatives: list[str] = field(default_factory=list)

    @property
    def duration(self) -> float | None:
        return None if self.closed is None else self.closed - self.opened

    @property
    def message_bound(self) -> int:
        return 2 * len(self.participants) + 2


def protocol_instances(records) -> dict[str, InstanceStats]:
    inst: dict[str, InstanceStats] = {}
    for r in records:
        p = r["payload"]
        if r["kind"] == EventKind.PROTOCOL_OPENED.value:
            inst[p["protocol_id"]] = InstanceStats(p["protocol_id"], p["kind"], r["timestamp"], p["deadline"],
                                                   p.get("parent"))
        elif r["kind"] == EventKind.PROTOCOL_CLOSED.value:
            s = inst[p["protocol_id"]]
            s.closed, s.outcome = r["timestamp"], p["outcome"]
            s.participants = tuple(p.get("participants", ()))
        elif r["type"] == "message" and r["conversation_id"] in inst:
            s = inst[r["conversation_id"]]
            s.messages += 1
            s.performatives.append(r["kind"])
    return inst


def chain_spans(instances: Mapping[str, InstanceStats]) -> dict[str, float]:
    """Root id -> time from the root's start to the close of its last nested descendant."""
    spans: dict[str, float] = {}
    for s in instances.values():
        if s.parent is None:
            continue
        root = s
        while root.parent is not None:
            root = instances[root.parent]
        end = s.closed if s.closed is not None else float("inf")
        spans[root.id] = max(spans.get(root.id, 0.0), end - root.opened)
    return spans


def negotiation_success(instances: Mapping[str, InstanceStats]) -> float | None:
    """Share of plan negotiations that reached agreement, among those where a plan was proposed."""
    contested = [s for s in instances.values() if s.kind == "PlanNegotiation" and "PROPOSE" in s.performatives]
    if not contested:
        return None
    return sum(s.outcome == "agreed" for s in contested) / len(contested)


def conflict_frequency(instances: Mapping[str, InstanceStats]) -> float | None:
    auctions = [s for s in instances.values() if s.kind == "ResourceAuction"]
    if not auctions:
        return None
    return sum(s.performatives.count("BID") >= 2 for s in auctions) / len(auctions)


@dataclass
class RunMetrics:
    variant: str
    seed: int
    precision: float
    recall: float
    f1: float
    tfcv: float | None
    makespan: float
    recovery_time: float | None
    disrupted: int
    messages_per_audit: int
    coordination_overhead: float
    llm_invocations_per_repair: float | None
    negotiation_success_rate: float | None
    conflict_frequency: float | None
    deadlock: bool

    def to_dict(self) -> dict:
        return asdict(self)


def compute(records: Sequence[Mapping], message_cost: float = 0.05,
            truth: Iterable[str] | None = None) -> RunMetrics:
    """Metrics of one complete run log; ``truth`` defaults to the seeded vulnerabilities."""
    end = run_end(records)
    p, r, f1 = detection_quality(records, truth)
    rec = recovery_times(records)
    msgs = message_count(records)
    span = end["last_activity"]
    inst = protocol_instances(records)
    return RunMetrics(
        variant=end.get("variant", ""), seed=end.get("seed", 0),
        precision=round(p, 6), recall=round(r, 6), f1=round(f1, 6),
        tfcv=time_to_first_critical(records), makespan=span,
        recovery_time=round(sum(rec) / len(rec), 6) if rec else None, disrupted=len(rec),
        messages_per_audit=msgs,
        coordination_overhead=round(msgs * message_cost / span, 9) if span else 0.0,
        llm_invocations_per_repair=llm_invocations_per_repair(records),
        negotiation_success_rate=negotiation_success(inst), conflict_frequency=conflict_frequency(inst),
        deadlock=bool(end["deadlock"]),
    )
