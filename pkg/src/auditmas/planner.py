"""Risk scoring and audit-plan construction for the planning agent."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from auditmas.beliefs import BeliefBase
from auditmas.domain import Contract

ANALYSES = ("static", "symbolic", "fuzz")


@dataclass(frozen=True)
class RiskParams:
    alpha: float = 0.5
    beta: float = 0.3
    gamma: float = 0.2
    theta: float = 0.15
    d_cap: float = 8.0
    # calibration constants, not derived: a lone confirmed critical finding
    # has to move a contract by more than theta to trigger a replan
    boost: Mapping[str, float] = field(default_factory=lambda: {"critical": 0.20, "high": 0.10})

    @classmethod
    def from_dict(cls, d: Mapping) -> RiskParams:
        kw = {k: d[k] for k in ("alpha", "beta", "gamma", "theta", "d_cap") if k in d}
        if "boost" in d:
            kw["boost"] = dict(d["boost"])
        return cls(**kw)


@dataclass(frozen=True)
class RiskProfile:
    contract: str
    complexity_term: float
    dependency_risk: float
    coverage_risk: float
    finding_boost: float
    total: float


@dataclass(frozen=True)
class AuditPlan:
    entries: tuple[tuple[str, tuple[str, ...]], ...]
    version: int = 0
    created_at: float = 0.0
    risk: Mapping[str, float] = field(default_factory=dict, compare=False)

    @property
    def order(self) -> list[str]:
        return [c for c, _ in self.entries]

    def rank(self, contract: str) -> int:
        return self.order.index(contract)

    def to_dict(self) -> dict:
        return {"order": self.order, "version": self.version, "created_at": self.created_at}


def degrees(corpus: Mapping[str, Contract]) -> dict[str, int]:
    """in-degree + out-degree of each contract in the dependency graph."""
    deg = {cid: len(c.dependencies) for cid, c in corpus.items()}
    for c in corpus.values():
        for d in c.dependencies:
            deg[d] += 1
    return deg


def finding_boost(contract: str, beliefs: BeliefBase | None, params: RiskParams) -> float:
    """Boost from confirmed findings, believed as ``severity(contract, vuln, level)``."""
    if beliefs is None:
        return 0.0
    total = 0.0
    for b in beliefs.query("severity"):
        c, _vid, level = b.formula.args
        if c == contract:
            total += params.boost.get(level, 0.0)
    return total


def risk_score(contract: Contract, beliefs: BeliefBase | None = None,
               corpus: Mapping[str, Contract] | None = None, params: RiskParams = RiskParams(),
               degree: int | None = None) -> RiskProfile:
    if corpus is not None and contract.id not in corpus:
        raise KeyError(f"unknown contract {contract.id}")
    if degree is None:
        degree = degrees(corpus)[contract.id] if corpus is not None else len(contract.dependencies)
    dep = min(1.0, degree / params.d_cap)
    cov = 1.0 - contract.test_coverage
    boost = finding_boost(contract.id, beliefs, params)
    raw = params.alpha * contract.complexity + params.beta * dep + params.gamma * cov + boost
    return RiskProfile(contract.id, contract.complexity, dep, cov, boost, min(1.0, max(0.0, raw)))


def risk_table(corpus: Mapping[str, Contract], beliefs: BeliefBase | None = None,
               params: RiskParams = RiskParams()) -> dict[str, RiskProfile]:
    deg = degrees(corpus)
    return {cid: risk_score(c, beliefs, None, params, deg[cid]) for cid, c in corpus.items()}


def order_by_risk(totals: Mapping[str, float]) -> list[str]:
    # a single sort: risk descending, contract id ascending on ties
    return sorted(totals, key=lambda c: (-totals[c], c))


def build_plan(corpus: Mapping[str, Contract], beliefs: BeliefBase | None = None,
               params: RiskParams = RiskParams(), version: int = 0, created_at: float = 0.0,
               analyses: Iterable[str] = ANALYSES) -> AuditPlan:
    if not corpus:
        raise ValueError("cannot plan an empty corpus")
    totals = {cid: p.total for cid, p in risk_table(corpus, beliefs, params).items()}
    analyses = tuple(analyses)
    return AuditPlan(tuple((c, analyses) for c in order_by_risk(totals)), version, created_at, totals)


def should_revise(old: RiskProfile | float, new: RiskProfile | float, theta: float = 0.15) -> bool:
    a = old.total if isinstance(old, RiskProfile) else old
    b = new.total if isinstance(new, RiskProfile) else new
    # rounded so float noise cannot turn an exact 0.15 into a replan
    return round(abs(b - a), 9) > theta
