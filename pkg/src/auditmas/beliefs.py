"""Confidence-weighted belief store with minimal-change revision.

Formulas are ground atoms over a fixed vocabulary. Consistency is defined by
conflict rules: a rule groups atoms by predicate and the first ``key_arity``
arguments, and allows at most ``capacity`` atoms per group. Revision keeps the
new belief and evicts the lowest-confidence (then oldest) group members until
every group is back within capacity.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True, order=True)
class Atom:
    pred: str
    args: tuple = ()

    def __str__(self):
        return f"{self.pred}({', '.join(map(str, self.args))})"

    def to_list(self) -> list:
        return [self.pred, *self.args]


def atom(pred: str, *args: Any) -> Atom:
    return Atom(pred, tuple(args))


# predicate -> arity
DEFAULT_VOCABULARY: dict[str, int] = {
    "vulnerable": 2,
    "not_vulnerable": 2,
    "severity": 3,
    "risk_score": 2,
    "tool_state": 2,
    "resource_available": 2,
    "repairing": 2,
    "last_fix": 1,
    "repair_feasible": 2,
    "plan_version": 1,
    "analyzed": 2,
    "responded": 1,
    "goal": 1,
}


@dataclass(frozen=True)
class ConflictRule:
    predicates: frozenset[str]
    key_arity: int
    capacity: int = 1

    def key(self, a: Atom) -> tuple | None:
        if a.pred not in self.predicates:
            return None
        return a.args[: self.key_arity]


def rule(*predicates: str, key_arity: int, capacity: int = 1) -> ConflictRule:
    return ConflictRule(frozenset(predicates), key_arity, capacity)


DEFAULT_CONFLICT_RULES: tuple[ConflictRule, ...] = (
    rule("vulnerable", "not_vulnerable", key_arity=2),
    rule("severity", key_arity=2),
    rule("risk_score", key_arity=1),
    rule("tool_state", key_arity=1),
    rule("resource_available", key_arity=1),
    rule("repairing", key_arity=1),
    rule("last_fix", key_arity=0),
    rule("repair_feasible", key_arity=1),
    rule("plan_version", key_arity=0),
)


class UnknownPredicate(KeyError):
    pass


@dataclass(frozen=True)
class Belief:
    formula: Atom
    confidence: float
    source: str = ""
    asserted_at: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of [0,1]: {self.confidence}")

    def to_dict(self) -> dict:
        return {"formula": self.formula.to_list(), "confidence": self.confidence,
                "source": self.source, "asserted_at": self.asserted_at}


@dataclass(frozen=True)
class BeliefBase:
    beliefs: Mapping[Atom, Belief] = field(default_factory=dict)
    conflict_rules: tuple[ConflictRule, ...] = DEFAULT_CONFLICT_RULES
    vocabulary: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_VOCABULARY))

    def __post_init__(self):
        seen: set[str] = set()
        for r in self.conflict_rules:
            overlap = seen & r.predicates
            if overlap:
                # overlapping rules would make greedy eviction non-optimal
                raise ValueError(f"predicates in more than one conflict rule: {sorted(overlap)}")
            seen |= r.predicates

    def __contains__(self, formula: Atom) -> bool:
        return formula in self.beliefs

    def __iter__(self) -> Iterator[Belief]:
        return iter(self.beliefs.values())

    def __len__(self) -> int:
        return len(self.beliefs)

    def get(self, formula: Atom) -> Belief | None:
        return self.beliefs.get(formula)

    def check_formula(self, formula: Atom) -> None:
        arity = self.vocabulary.get(formula.pred)
        if arity is None:
            raise UnknownPredicate(formula.pred)
        if len(formula.args) != arity:
            raise ValueError(f"{formula.pred} takes {arity} arguments, got {len(formula.args)}")

    def with_beliefs(self, beliefs: Iterable[Belief]) -> BeliefBase:
        base = self
        for b in beliefs:
            base = revise(base, b)
        return base

    def query(self, pred: str) -> list[Belief]:
        return [b for b in self.beliefs.values() if b.formula.pred == pred]

    def value(self, pred: str, *key: Any, default: Any = None) -> Any:
        """Last argument of the unique ``pred(*key, x)`` atom, if believed."""
        for b in self.beliefs.values():
            f = b.formula
            if f.pred == pred and f.args[: len(key)] == key:
                return f.args[-1]
        return default

    def conflicts(self, a: Atom, b: Atom) -> bool:
        if a == b:
            return False
        for r in self.conflict_rules:
            ka, kb = r.key(a), r.key(b)
            if ka is not None and ka == kb and r.capacity == 1:
                return True
        return False

    def is_consistent(self, beliefs: Iterable[Belief] | None = None) -> bool:
        items = list(self.beliefs.values() if beliefs is None else beliefs)
        for r in self.conflict_rules:
            counts: dict[tuple, int] = {}
            for b in items:
                k = r.key(b.formula)
                if k is not None:
                    counts[k] = counts.get(k, 0) + 1
                    if counts[k] > r.capacity:
                        return False
        return True

    def dump(self) -> list[dict]:
        return [b.to_dict() for b in sorted(self.beliefs.values(), key=lambda b: b.formula)]


def revise(base: BeliefBase, new_belief: Belief) -> BeliefBase:
    """Revise ``base`` by ``new_belief``.

    The new belief always ends up in the result. A belief on the same formula
    is replaced (a no-op when the confidence is unchanged). For each conflict
    group the new belief joins, members are evicted in ascending
    ``(confidence, asserted_at)`` order until the group fits its capacity;
    nothing outside those groups is touched.
    """
    f = new_belief.formula
    base.check_formula(f)
    old = base.beliefs.get(f)
    if old is not None and old.confidence == new_belief.confidence:
        return base

    beliefs = dict(base.beliefs)
    beliefs.pop(f, None)
    for r in base.conflict_rules:
        k = r.key(f)
        if k is None:
            continue
        group = [b for b in beliefs.values() if r.key(b.formula) == k]
        excess = len(group) + 1 - r.capacity
        if excess > 0:
            group.sort(key=lambda b: (b.confidence, b.asserted_at))
            for b in group[:excess]:
                del beliefs[b.formula]
    beliefs[f] = new_belief
    return BeliefBase(beliefs, base.conflict_rules, base.vocabulary)


def retract(base: BeliefBase, formula: Atom) -> BeliefBase:
    if formula not in base.beliefs:
        return base
    beliefs = dict(base.beliefs)
    del beliefs[formula]
    return BeliefBase(beliefs, base.conflict_rules, base.vocabulary)


def entails(base: BeliefBase, formula: Atom) -> bool:
    """Ground-atom entailment: true iff the atom itself is believed."""
    base.check_formula(formula)
    return formula in base.beliefs
