"""Programmatic-first iterative repair (PFIR) of broken generated test artifacts.

Artifacts are simulated: each broken artifact carries a failure class and a
diagnostic string. Deterministic template fixes are tried first; the costly
generative strategy is only used once the templates for the class are
exhausted and the ticket is still worth fixing.
"""

from __future__ import annotations

import dataclasses
import math
import re
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

MAX_ATTEMPTS = 5


class FailureClass(str, Enum):
    MISSING_IMPORT = "missing_import"
    WRONG_IDENTIFIER = "wrong_identifier"
    MALFORMED_ASSERTION = "malformed_assertion"
    HARNESS_MISCONFIG = "harness_misconfig"
    ENVIRONMENTAL = "environmental"
    SEMANTIC_NONLOCAL = "semantic_nonlocal"


LOCAL_CLASSES = frozenset({
    FailureClass.MISSING_IMPORT, FailureClass.WRONG_IDENTIFIER,
    FailureClass.MALFORMED_ASSERTION, FailureClass.HARNESS_MISCONFIG,
})


class Strategy(str, Enum):
    DETERMINISTIC = "deterministic"
    GENERATIVE = "generative"


# diagnostic templates; classification has to invert these exactly
DIAGNOSTIC_TEMPLATES: dict[FailureClass, tuple[str, ...]] = {
    FailureClass.MISSING_IMPORT: (
        "unresolved symbol '{sym}' at import line {line}",
        'source "{path}" not found: file import callback not supported',
    ),
    FailureClass.WRONG_IDENTIFIER: (
        "undeclared identifier '{sym}' at line {line}",
        "member '{sym}' not found in contract {contract}",
    ),
    FailureClass.MALFORMED_ASSERTION: (
        "assertion call expects {n} arguments, got {m} at line {line}",
        "invalid assertion operand: type {type} not comparable at line {line}",
    ),
    FailureClass.HARNESS_MISCONFIG: (
        "setUp() reverted: {reason}",
        "harness config: unknown profile '{sym}'",
    ),
    FailureClass.ENVIRONMENTAL: (
        "tool exited {code} {k} consecutive runs",
        "dependency {pkg} unavailable",
    ),
    FailureClass.SEMANTIC_NONLOCAL: (
        "invariant violated: test assumes {sym} initialised by another contract",
    ),
}

_PATTERNS: tuple[tuple[re.Pattern, FailureClass], ...] = (
    (re.compile(r"unresolved symbol .* import line|source \".*\" not found"), FailureClass.MISSING_IMPORT),
    (re.compile(r"undeclared identifier|member '.*' not found in contract"), FailureClass.WRONG_IDENTIFIER),
    (re.compile(r"assertion call expects|invalid assertion operand"), FailureClass.MALFORMED_ASSERTION),
    (re.compile(r"^setUp\(\) reverted|harness config: "), FailureClass.HARNESS_MISCONFIG),
    (re.compile(r"tool exited \d+ .*consecutive runs|dependency .* unavailable"), FailureClass.ENVIRONMENTAL),
    (re.compile(r"^invariant violated: test assumes"), FailureClass.SEMANTIC_NONLOCAL),
)

_FILLERS = {
    "sym": ("IERC20", "flashLoan", "owner", "pool", "DamnValuableToken", "receiver", "vault"),
    "path": ("src/Pool.sol", "lib/forge-std/Test.sol", "src/Token.sol"),
    "contract": ("Pool", "Vault", "Lender", "Exchange"),
    "reason": ("insufficient balance", "not owner", "paused"),
    "type": ("address", "bytes", "tuple"),
    "pkg": ("solc-0.8.19", "anvil", "forge-std"),
}


def generate_diagnostic(cls: FailureClass | str, rng: np.random.Generator) -> str:
    cls = FailureClass(cls)
    templates = DIAGNOSTIC_TEMPLATES[cls]
    tpl = templates[int(rng.integers(len(templates)))]
    vals = {k: v[int(rng.integers(len(v)))] for k, v in _FILLERS.items()}
    vals.update(line=int(rng.integers(1, 400)), n=2, m=int(rng.integers(3, 5)),
                code=137, k=int(rng.integers(3, 6)))
    return tpl.format(**vals)


def classify_failure(diagnostic: str) -> FailureClass:
    """Map diagnostics to a failure class; anything unrecognised is non-local."""
    for pattern, cls in _PATTERNS:
        if pattern.search(diagnostic):
            return cls
    return FailureClass.SEMANTIC_NONLOCAL


@dataclass(frozen=True)
class RepairConfig:
    deterministic_success: Mapping[str, float] = field(default_factory=lambda: {
        c.value: 0.70 for c in LOCAL_CLASSES})
    generative_success: float = 0.85
    # number of distinct deterministic templates available per class
    templates: Mapping[str, int] = field(default_factory=lambda: {
        "missing_import": 2, "wrong_identifier": 2, "malformed_assertion": 1, "harness_misconfig": 1})
    generative_cost: float = 500.0
    deterministic_seconds: float = 5.0
    generative_seconds: float = 30.0
    max_attempts: int = MAX_ATTEMPTS
    top_k: int = 10
    top_fraction: float = 0.25
    ticket_budget: float = 5_000.0
    cost_norm: float = 10_000.0
    opportunity_weight: float = 0.25

    @classmethod
    def from_dict(cls, d: Mapping) -> RepairConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown repair settings {sorted(unknown)}")
        kw = dict(d)
        if "deterministic_success" in kw and not isinstance(kw["deterministic_success"], Mapping):
            kw["deterministic_success"] = {c.value: float(kw["deterministic_success"]) for c in LOCAL_CLASSES}
        return cls(**kw)

    def success_probability(self, cls: FailureClass, strategy: Strategy) -> float:
        if strategy is Strategy.GENERATIVE:
            return self.generative_success if cls in LOCAL_CLASSES else 0.0
        return self.deterministic_success.get(cls.value, 0.0)

    def cost(self, strategy: Strategy) -> float:
        return self.generative_cost if strategy is Strategy.GENERATIVE else 0.0

    def seconds(self, strategy: Strategy) -> float:
        return self.generative_seconds if strategy is Strategy.GENERATIVE else self.deterministic_seconds

    def top_limit(self, plan_size: int) -> int:
        return max(self.top_k, math.ceil(self.top_fraction * plan_size))


@dataclass(frozen=True)
class Attempt:
    strategy: Strategy
    outcome: str
    cost: float


@dataclass(frozen=True)
class RepairTicket:
    artifact: str
    contract: str
    failure_class: FailureClass
    attempts: tuple[Attempt, ...] = ()
    budget_remaining: float = 0.0
    mission_value: float = 1.0
    diagnostic: str = ""

    @property
    def deterministic_attempts(self) -> int:
        return sum(a.strategy is Strategy.DETERMINISTIC for a in self.attempts)

    @property
    def tokens_spent(self) -> float:
        return sum(a.cost for a in self.attempts)

    @property
    def repaired(self) -> bool:
        return bool(self.attempts) and self.attempts[-1].outcome == "success"

    def record(self, strategy: Strategy, success: bool, cost: float) -> RepairTicket:
        return dataclasses.replace(
            self, attempts=self.attempts + (Attempt(strategy, "success" if success else "fail", cost),),
            budget_remaining=self.budget_remaining - cost)


@dataclass(frozen=True)
class PlanContext:
    """What the repairer knows about the active plan."""
    rank: int = 0
    plan_size: int = 1
    best_pending_risk: float = 0.0


def next_strategy(ticket: RepairTicket, config: RepairConfig) -> Strategy:
    """Deterministic while untried templates remain for the class, then generative."""
    if ticket.deterministic_attempts < config.templates.get(ticket.failure_class.value, 0):
        return Strategy.DETERMINISTIC
    return Strategy.GENERATIVE


def worth_fixing(ticket: RepairTicket, pending: PlanContext = PlanContext(),
                 config: RepairConfig = RepairConfig(), strategy: Strategy | None = None) -> bool:
    """Conjunction of locality, plan priority, budget fit and expected value.

    Expected value of the next attempt is mission_value * P(success) minus
    its normalised token cost; it must beat a fixed share of the best pending
    task's risk (the value forgone while the repairer is busy).
    """
    if ticket.failure_class not in LOCAL_CLASSES:
        return False
    if pending.rank >= config.top_limit(pending.plan_size):
        return False
    strategy = strategy or next_strategy(ticket, config)
    cost = config.cost(strategy)
    if cost > ticket.budget_remaining:
        return False
    ev = ticket.mission_value * config.success_probability(ticket.failure_class, strategy) - cost / config.cost_norm
    return ev > config.opportunity_weight * pending.best_pending_risk


@dataclass(frozen=True)
class RepairOutcome:
    status: str  # "repaired" or "abandoned"
    ticket: RepairTicket
    report: Mapping | None = None

    @property
    def repaired(self) -> bool:
        return self.status == "repaired"


def failure_report(ticket: RepairTicket) -> dict:
    return {"artifact": ticket.artifact, "contract": ticket.contract,
            "failure_class": ticket.failure_class.value, "attempts": len(ticket.attempts),
            "cost": ticket.tokens_spent}


# draw(ticket, attempt_index, strategy) -> uniform in [0,1)
Draw = Callable[[RepairTicket, int, Strategy], float]


def pfir_step(ticket: RepairTicket, draw: Draw, config: RepairConfig = RepairConfig(),
              pending: PlanContext = PlanContext(),
              generative_available: bool | Callable[[], bool] = True,
              debit: Callable[[float], bool] | None = None) -> tuple[RepairTicket, RepairOutcome | None]:
    """One PFIR attempt. Returns the updated ticket and, if the loop ended, its outcome.

    ``generative_available`` may be a callable; it is invoked only when a
    funded generative attempt is actually made (it stands for the call).
    """
    if len(ticket.attempts) >= config.max_attempts:
        return ticket, RepairOutcome("abandoned", ticket, failure_report(ticket))
    strategy = next_strategy(ticket, config)
    if not worth_fixing(ticket, pending, config, strategy):
        return ticket, RepairOutcome("abandoned", ticket, failure_report(ticket))
    cost = config.cost(strategy)
    u = draw(ticket, len(ticket.attempts), strategy)
    funded = cost == 0 or debit is None or debit(cost)
    if not funded:
        ticket = ticket.record(strategy, False, 0.0)
    else:
        ok = u < config.success_probability(ticket.failure_class, strategy)
        if strategy is Strategy.GENERATIVE:
            available = generative_available() if callable(generative_available) else generative_available
            ok = ok and available
        ticket = ticket.record(strategy, ok, cost)
    if ticket.repaired:
        return ticket, RepairOutcome("repaired", ticket)
    if len(ticket.attempts) >= config.max_attempts:
        return ticket, RepairOutcome("abandoned", ticket, failure_report(ticket))
    return ticket, None


def pfir_loop(ticket: RepairTicket, draw: Draw, config: RepairConfig = RepairConfig(),
              pending: PlanContext = PlanContext(),
              generative_available: bool | Callable[[], bool] = True,
              debit: Callable[[float], bool] | None = None) -> RepairOutcome:
    """Run attempts until repaired, MAX_ATTEMPTS, or the ticket stops being worth fixing."""
    while True:
        ticket, outcome = pfir_step(ticket, draw, config, pending, generative_available, debit)
        if outcome is not None:
            return outcome


# -- synthetic batches ----------------------------------------------------

# share of each class among broken artifacts (sums to 1)
DEFAULT_CLASS_MIX: dict[str, float] = {
    "missing_import": 0.30, "wrong_identifier": 0.28, "malformed_assertion": 0.18,
    "harness_misconfig": 0.18, "environmental": 0.04, "semantic_nonlocal": 0.02,
}


def stratified_classes(n: int, mix: Mapping[str, float], rng: np.random.Generator) -> list[FailureClass]:
    """Exactly round(n*share) of each class (largest remainder), in shuffled order."""
    names = sorted(mix)
    raw = np.array([mix[c] * n for c in names])
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    out = [FailureClass(c) for c, k in zip(names, counts) for _ in range(k)]
    rng.shuffle(out)
    return out


@dataclass(frozen=True)
class BatchResult:
    batch: int
    objectives: int
    attempts: int
    successes: int
    deterministic_successes: int
    tokens: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.objectives if self.objectives else 0.0

    @property
    def deterministic_share(self) -> float:
        return self.deterministic_successes / self.successes if self.successes else 0.0


def run_batches(n_objectives: int = 500, n_batches: int = 10, seed: int = 42,
                config: RepairConfig = RepairConfig(), mix: Mapping[str, float] | None = None,
                budget: float = 1e9) -> list[BatchResult]:
    """Synthetic repair objectives: classify, then run PFIR on each."""
    mix = mix or DEFAULT_CLASS_MIX
    root = np.random.SeedSequence(seed)
    per = n_objectives // n_batches
    results = []
    for b, child in enumerate(root.spawn(n_batches)):
        rng = np.random.default_rng(child)
        classes = stratified_classes(per, mix, rng)
        attempts = successes = det = 0
        tokens = 0.0
        for i, cls in enumerate(classes):
            diag = generate_diagnostic(cls, rng)
            ticket = RepairTicket(f"b{b}-a{i:03d}", f"c{i:03d}", classify_failure(diag),
                                  budget_remaining=budget,
                                  mission_value=float(rng.uniform(0.5, 1.0)), diagnostic=diag)
            draws = rng.random(config.max_attempts)
            ctx = PlanContext(rank=int(rng.integers(config.top_k)), plan_size=per,
                              best_pending_risk=float(rng.uniform(0.0, 1.0)))
            out = pfir_loop(ticket, lambda t, k, s: float(draws[k]), config, ctx)
            attempts += len(out.ticket.attempts)
            tokens += out.ticket.tokens_spent
            if out.repaired:
                successes += 1
                det += out.ticket.attempts[-1].strategy is Strategy.DETERMINISTIC
        results.append(BatchResult(b, per, attempts, successes, det, tokens))
    return results


def batch_csv(results: Sequence[BatchResult]) -> str:
    lines = ["batch,attempts,successes,deterministic_share"]
    lines += [f"{r.batch},{r.attempts},{r.successes},{r.deterministic_share:.4f}" for r in results]
    return "\n".join(lines) + "\n"
