"""Synthetic contract corpus with hidden ground-truth vulnerabilities."""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from auditmas.domain import SEVERITIES, Contract, GroundTruthVuln

VULN_CLASSES = ("reentrancy", "access_control", "integer_overflow", "oracle_manipulation",
                "unchecked_call", "flash_loan")

DEFAULT_SEVERITY_MIX = {"critical": 0.25, "high": 0.35, "medium": 0.25, "low": 0.15}


@dataclass(frozen=True)
class CorpusSpec:
    n_contracts: int = 15
    n_vulns: int = 6
    dependency_density: float = 0.1
    severity_mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SEVERITY_MIX))
    severity_counts: Mapping[str, int] | None = None
    max_vulns_per_contract: int = 1
    risk_exponent: float = 3.0
    # "risk": ids in generation order; "late": critical contracts take the last ids
    critical_placement: str = "risk"
    complexity_beta: tuple[float, float] = (2.0, 2.0)
    coverage_beta: tuple[float, float] = (2.0, 2.0)

    @classmethod
    def from_dict(cls, d: Mapping) -> CorpusSpec:
        kw = dict(d)
        for k in ("complexity_beta", "coverage_beta"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)

    def counts(self) -> dict[str, int]:
        if self.severity_counts is not None:
            counts = {s: int(self.severity_counts.get(s, 0)) for s in SEVERITIES}
            if sum(counts.values()) != self.n_vulns:
                raise ValueError("severity_counts do not add up to n_vulns")
            return counts
        raw = np.array([self.severity_mix.get(s, 0.0) for s in SEVERITIES], dtype=float)
        raw = raw / raw.sum() * self.n_vulns
        counts = np.floor(raw).astype(int)
        for i in np.argsort(-(raw - counts), kind="stable")[: self.n_vulns - counts.sum()]:
            counts[i] += 1
        return dict(zip(SEVERITIES, map(int, counts)))


def _base_risk(complexity: float, degree: int, coverage: float) -> float:
    # same weights as the planner's defaults, without findings
    return 0.5 * complexity + 0.3 * min(1.0, degree / 8) + 0.2 * (1 - coverage)


def generate_corpus(spec: CorpusSpec, seed: int) -> dict[str, Contract]:
    """Same (spec, seed) always yields the same corpus."""
    n = spec.n_contracts
    if n <= 0:
        raise ValueError("corpus needs at least one contract")
    counts = spec.counts()
    cap = spec.max_vulns_per_contract
    if spec.n_vulns > n * min(cap, len(VULN_CLASSES)):
        raise ValueError(f"infeasible corpus: {spec.n_vulns} vulnerabilities over {n} contracts "
                         f"with at most {cap} per contract")
    if counts["critical"] > n:
        raise ValueError(f"infeasible corpus: {counts['critical']} critical vulnerabilities > {n} contracts")
    if spec.critical_placement not in ("risk", "late"):
        raise ValueError(f"unknown critical_placement {spec.critical_placement!r}")

    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0x0C0,)))
    complexity = rng.beta(*spec.complexity_beta, size=n)
    coverage = rng.beta(*spec.coverage_beta, size=n)
    deps: list[set[int]] = [set() for _ in range(n)]
    for j in range(n):
        for i in range(j):
            if rng.random() < spec.dependency_density:
                deps[j].add(i)
    degree = [len(deps[j]) for j in range(n)]
    for j in range(n):
        for i in deps[j]:
            degree[i] += 1
    risk = np.array([_base_risk(complexity[j], degree[j], coverage[j]) for j in range(n)])

    # vulnerable slots: weighted sampling without replacement, weight risk^k
    slots: list[int] = []
    weights = np.maximum(risk, 1e-6) ** spec.risk_exponent
    remaining = {j: cap for j in range(n)}
    while len(slots) < spec.n_vulns:
        cand = [j for j in range(n) if remaining[j] > 0]
        w = np.array([weights[j] for j in cand])
        j = cand[int(rng.choice(len(cand), p=w / w.sum()))]
        slots.append(j)
        remaining[j] -= 1
    # most severe findings go to the riskiest contracts
    slots.sort(key=lambda j: (-risk[j], j))
    severities = [s for s in SEVERITIES for _ in range(counts[s])]
    vulns: dict[int, list[GroundTruthVuln]] = {j: [] for j in range(n)}
    for j, sev in zip(slots, severities):
        taken = {v.vclass for v in vulns[j]}
        options = [c for c in VULN_CLASSES if c not in taken]
        vulns[j].append(GroundTruthVuln(options[int(rng.integers(len(options)))], sev))

    order = list(range(n))
    if spec.critical_placement == "late":
        crit = {j for j in range(n) if any(v.severity == "critical" for v in vulns[j])}
        order = [j for j in range(n) if j not in crit] + [j for j in range(n) if j in crit]
    width = max(3, len(str(n - 1)))
    name = {j: f"c{k:0{width}d}" for k, j in enumerate(order)}
    corpus = {}
    for j in range(n):
        c = Contract(name[j], round(float(complexity[j]), 6), frozenset(name[i] for i in deps[j]),
                     round(float(coverage[j]), 6), tuple(vulns[j]))
        corpus[c.id] = c
    return dict(sorted(corpus.items()))


def corpus_json(corpus: Mapping[str, Contract]) -> str:
    return json.dumps([corpus[k].to_dict() for k in sorted(corpus)], sort_keys=True, separators=(",", ":"))


def ground_truth(corpus: Mapping[str, Contract]) -> dict[str, GroundTruthVuln]:
    """vulnerability id -> spec; ids are ``contract/class`` like the tools report them."""
    return {f"{c.id}/{v.vclass}": v for c in corpus.values() for v in c.ground_truth_vulns}
