"""Simulated analysis tools and generative service.

Every draw is keyed by (modality, contract, class) so a retry, a different
tool instance of the same modality, or a different architecture on the same
seed sees the same detection outcome.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

from auditmas.domain import Contract, Event, EventKind
from auditmas.sim.clock import VirtualClock
from auditmas.sim.corpus import VULN_CLASSES
from auditmas.sim.faults import FaultSchedule
from auditmas.sim.rng import RunRandom

MODALITIES = ("static", "symbolic", "fuzz")


@dataclass(frozen=True)
class ToolProfile:
    modality: str
    tp_rate: Mapping[str, float]
    fp_rate: float = 0.05
    runtime: float = 20.0
    capability: float = 0.8

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality}")
        for v in (*self.tp_rate.values(), self.fp_rate, self.capability):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"rate out of [0,1] in {self.modality} profile")

    def tp(self, vclass: str) -> float:
        return self.tp_rate.get(vclass, self.tp_rate.get("*", 0.0))

    @classmethod
    def from_dict(cls, modality: str, d: Mapping) -> ToolProfile:
        tp = d.get("tp_rate", {})
        tp = {"*": float(tp)} if not isinstance(tp, Mapping) else {k: float(v) for k, v in tp.items()}
        return cls(modality, tp, float(d.get("fp_rate", 0.05)), float(d.get("runtime", 20.0)),
                   float(d.get("capability", 0.8)))


def default_profiles() -> dict[str, ToolProfile]:
    return {
        "static": ToolProfile("static", {"*": 0.55, "reentrancy": 0.75, "access_control": 0.7,
                                         "unchecked_call": 0.8}, 0.08, 20.0, 0.8),
        "symbolic": ToolProfile("symbolic", {"*": 0.6, "integer_overflow": 0.8, "reentrancy": 0.7},
                                0.04, 60.0, 0.75),
        "fuzz": ToolProfile("fuzz", {"*": 0.5, "oracle_manipulation": 0.65, "flash_loan": 0.7},
                            0.03, 90.0, 0.7),
    }


@dataclass(frozen=True)
class Finding:
    vulnerability: str
    contract: str
    vclass: str
    severity: str
    confidence: float
    true_positive: bool

    def payload(self, tool: str) -> dict:
        return {"id": self.vulnerability, "severity": self.severity, "detecting_tool": tool,
                "confidence": self.confidence, "vclass": self.vclass}


@dataclass(frozen=True)
class SimulatedTool:
    id: str
    profile: ToolProfile
    host: str = ""

    @property
    def modality(self) -> str:
        return self.profile.modality


def scan(profile: ToolProfile, contract: Contract, rr: RunRandom) -> list[Finding]:
    """Pure detection outcome of one modality on one contract."""
    m = profile.modality
    out = []
    for v in contract.ground_truth_vulns:
        if rr.uniform("detect", m, contract.id, v.vclass) < profile.tp(v.vclass):
            conf = 0.6 + 0.4 * rr.uniform("conf", m, contract.id, v.vclass)
            out.append(Finding(f"{contract.id}/{v.vclass}", contract.id, v.vclass, v.severity,
                               round(conf, 6), True))
    if rr.uniform("fp", m, contract.id) < profile.fp_rate:
        real = {v.vclass for v in contract.ground_truth_vulns}
        options = [c for c in VULN_CLASSES if c not in real]
        if options:
            vclass = rr.choice(options, "fp-class", m, contract.id)
            sev = rr.choice(("critical", "high", "medium", "low"), "fp-sev", m, contract.id)
            conf = 0.3 + 0.5 * rr.uniform("fp-conf", m, contract.id)
            out.append(Finding(f"{contract.id}/{vclass}", contract.id, vclass, sev, round(conf, 6), False))
    return out


@dataclass
class ToolRun:
    tool: str
    contract: str
    findings: list[Finding] = field(default_factory=list)
    error: str | None = None
    events: list[Event] = field(default_factory=list)


def run_tool(tool: SimulatedTool, contract: Contract, clock: VirtualClock, rr: RunRandom,
             faults: FaultSchedule = FaultSchedule()) -> ToolRun:
    """Synchronous run: fails at once if the tool is down, else advances the clock by its runtime."""
    down = faults.tool_down(tool.id, clock.now)
    if down is not None:
        err = "crash" if down.kind.value == "tool_crash" else "timeout"
        return ToolRun(tool.id, contract.id, error=err,
                       events=[Event(EventKind.TOOL_FAILED, {"tool": tool.id, "error": err}, clock.now)])
    clock.advance(clock.now + tool.profile.runtime)
    findings = scan(tool.profile, contract, rr)
    events = [Event(EventKind.VULN_DETECTED, {"vulnerability": f.payload(tool.id), "contract": f.contract},
                    clock.now) for f in findings]
    return ToolRun(tool.id, contract.id, findings, None, events)
