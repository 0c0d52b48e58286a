"""Fault schedules: tool crashes, message loss, partitions, generative-API outages."""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from auditmas.domain import Message, Performative

LLM_TARGET = "llm"


class FaultKind(str, Enum):
    TOOL_CRASH = "tool_crash"
    MESSAGE_LOSS = "message_loss"
    PARTITION = "partition"
    LLM_API_FAILURE = "llm_api_failure"
    TIMEOUT_INJECTION = "timeout_injection"


@dataclass(frozen=True)
class Fault:
    """One injected fault over ``[start, start + duration)``.

    Targets by kind:

    * tool_crash / timeout_injection: a tool id (timeout_injection also
      accepts ``"llm"``)
    * llm_api_failure: ``"llm"``
    * message_loss: ``"*"``, a performative name, or an agent id (matches
      either end); ``rate`` is the drop probability
    * partition: ``"a,b|c,d"`` separates the two sides, ``"a,b"`` isolates
      those agents from everyone else
    """
    kind: FaultKind
    target: str
    start: float
    duration: float
    rate: float = 1.0
    id: str = ""

    def __post_init__(self):
        if self.duration < 0 or self.start < 0:
            raise ValueError(f"fault {self.id or self.target}: negative start/duration")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"fault {self.id or self.target}: rate out of [0,1]")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def active(self, t: float) -> bool:
        return self.start <= t < self.end

    def sides(self) -> tuple[frozenset[str], frozenset[str] | None]:
        left, _, right = self.target.partition("|")
        a = frozenset(s.strip() for s in left.split(",") if s.strip())
        b = frozenset(s.strip() for s in right.split(",") if s.strip()) if right else None
        return a, b

    def separates(self, x: str, y: str) -> bool:
        a, b = self.sides()
        if b is None:
            return (x in a) != (y in a)
        return (x in a and y in b) or (x in b and y in a)

    def matches(self, msg: Message) -> bool:
        t = self.target
        return t in ("*", msg.performative.value, msg.sender, msg.receiver)

    def names(self) -> set[str]:
        if self.kind is FaultKind.PARTITION:
            a, b = self.sides()
            return set(a) | set(b or ())
        return {self.target}

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "target": self.target,
                "start_s": self.start, "duration_s": self.duration, "rate": self.rate}

    @classmethod
    def from_dict(cls, d: Mapping, index: int = 0) -> Fault:
        return cls(FaultKind(d["kind"]), str(d["target"]), float(d["start_s"]), float(d["duration_s"]),
                   float(d.get("rate", 1.0)), str(d.get("id", f"f{index}")))


@dataclass(frozen=True)
class FaultSchedule:
    faults: tuple[Fault, ...] = ()

    def __post_init__(self):
        ids = [f.id for f in self.faults]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate fault ids: {ids}")

    @classmethod
    def of(cls, faults: Iterable[Fault]) -> FaultSchedule:
        out = []
        for i, f in enumerate(faults):
            out.append(f if f.id else Fault(f.kind, f.target, f.start, f.duration, f.rate, f"f{i}"))
        return cls(tuple(out))

    def __iter__(self):
        return iter(self.faults)

    def __len__(self):
        return len(self.faults)

    def validate(self, agents: Iterable[str], tools: Iterable[str]) -> None:
        agents, tools = set(agents), set(tools)
        for f in self.faults:
            if f.kind in (FaultKind.TOOL_CRASH,):
                ok = f.target in tools
            elif f.kind is FaultKind.TIMEOUT_INJECTION:
                ok = f.target in tools or f.target == LLM_TARGET
            elif f.kind is FaultKind.LLM_API_FAILURE:
                ok = f.target == LLM_TARGET
            elif f.kind is FaultKind.PARTITION:
                ok = bool(f.names()) and f.names() <= agents
            else:
                ok = f.target == "*" or f.target in agents or f.target in Performative.__members__
            if not ok:
                raise ValueError(f"fault {f.id}: unknown target {f.target!r} for {f.kind.value}")

    def _first(self, t: float, pred) -> Fault | None:
        for f in self.faults:
            if f.active(t) and pred(f):
                return f
        return None

    def tool_down(self, tool: str, t: float) -> Fault | None:
        return self._first(t, lambda f: f.target == tool and f.kind in (
            FaultKind.TOOL_CRASH, FaultKind.TIMEOUT_INJECTION))

    def llm_down(self, t: float) -> Fault | None:
        return self._first(t, lambda f: f.target == LLM_TARGET and f.kind in (
            FaultKind.LLM_API_FAILURE, FaultKind.TIMEOUT_INJECTION))

    def partition(self, a: str, b: str, t: float) -> Fault | None:
        return self._first(t, lambda f: f.kind is FaultKind.PARTITION and f.separates(a, b))

    def loss(self, msg: Message, t: float) -> Fault | None:
        return self._first(t, lambda f: f.kind is FaultKind.MESSAGE_LOSS and f.matches(msg))

    def ends(self) -> list[float]:
        return sorted({f.end for f in self.faults})


def random_schedule(rng: np.random.Generator, agents: Sequence[str], tools: Sequence[str],
                    horizon: float, max_faults: int = 4, max_duration: float = 120.0) -> FaultSchedule:
    """Fuzzed schedule: loss up to 100%, arbitrary partitions, crashes, outages."""
    faults = []
    for i in range(int(rng.integers(1, max_faults + 1))):
        kind = list(FaultKind)[int(rng.integers(len(FaultKind)))]
        start = float(rng.uniform(0, horizon))
        dur = float(rng.uniform(1, max_duration))
        rate = 1.0
        if kind is FaultKind.TOOL_CRASH:
            target = tools[int(rng.integers(len(tools)))]
        elif kind is FaultKind.TIMEOUT_INJECTION:
            target = ([*tools, LLM_TARGET])[int(rng.integers(len(tools) + 1))]
        elif kind is FaultKind.LLM_API_FAILURE:
            target = LLM_TARGET
        elif kind is FaultKind.PARTITION:
            members = sorted(agents)
            mask = rng.random(len(members)) < 0.5
            side = [a for a, m in zip(members, mask) if m] or [members[int(rng.integers(len(members)))]]
            if len(side) == len(members):
                side = side[:-1]
            target = ",".join(side)
        else:
            opts = ["*", "BID", "CFP", "AWARD", "INFORM", "PROPOSE", *agents]
            target = opts[int(rng.integers(len(opts)))]
            rate = float(rng.choice([0.3, 0.7, 1.0]))
        faults.append(Fault(kind, target, round(start, 3), round(dur, 3), rate, f"f{i}"))
    return FaultSchedule(tuple(faults))
