"""Independent reference implementations used as test oracles."""

import itertools

from auditmas.beliefs import BeliefBase, atom, rule

# small vocabulary: p/q exclude each other per first argument, r allows two
# atoms in total, s is unconstrained
VOCAB = {"p": 2, "q": 2, "r": 1, "s": 1}
RULES = (rule("p", "q", key_arity=1), rule("r", key_arity=0, capacity=2))
ATOMS = ([atom(pr, a, b) for pr in ("p", "q") for a in "ab" for b in "xy"]
         + [atom(pr, a) for pr in ("r", "s") for a in "abc"])


def small_base(beliefs=()):
    return BeliefBase({b.formula: b for b in beliefs}, RULES, VOCAB)


def agm_revise(base, new):
    """All maximal consistent subsets of base + new that keep new; pick max total confidence.

    Returns the list of optimal formula sets (more than one only on exact ties).
    """
    if new.formula in base and base.get(new.formula).confidence == new.confidence:
        return [set(base.beliefs)]
    others = [b for b in base if b.formula != new.formula]
    ok = []
    for r in range(len(others), -1, -1):
        for subset in itertools.combinations(others, r):
            if base.is_consistent([*subset, new]):
                ok.append(frozenset(b.formula for b in subset))
    maximal = [s for s in ok if not any(s < t for t in ok)]
    weight = {b.formula: b.confidence for b in others}
    best = max(sum(weight[f] for f in s) for s in maximal)
    return [set(s) | {new.formula} for s in maximal if abs(sum(weight[f] for f in s) - best) < 1e-12]


def contract_net_argmax(bids):
    """Brute-force winner: highest 0.7*capability + 0.3*availability, lowest id on ties."""
    best = None
    for b in bids:
        s = 0.7 * b.capability + 0.3 * b.availability
        if best is None or s > best[0] or (s == best[0] and b.bidder < best[1].bidder):
            best = (s, b)
    return best[1]
