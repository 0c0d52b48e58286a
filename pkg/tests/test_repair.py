import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from auditmas.repair import (
    DEFAULT_CLASS_MIX, LOCAL_CLASSES, FailureClass, PlanContext, RepairConfig, RepairTicket, Strategy,
    batch_csv, classify_failure, generate_diagnostic, pfir_loop, pfir_step, run_batches,
    stratified_classes, worth_fixing,
)


def ticket(cls=FailureClass.MISSING_IMPORT, budget=10_000.0, value=1.0):
    return RepairTicket("a1", "c1", cls, budget_remaining=budget, mission_value=value)


def fixed(*draws):
    return lambda t, k, s: draws[k]


def test_classify_known_diagnostics():
    assert classify_failure("unresolved symbol at import line") is FailureClass.MISSING_IMPORT
    assert classify_failure("tool exited 137 three consecutive runs") is FailureClass.ENVIRONMENTAL
    assert classify_failure("something nobody has seen") is FailureClass.SEMANTIC_NONLOCAL


def test_generate_then_classify_round_trip():
    rng = np.random.default_rng(3)
    labels = [cls for cls in FailureClass for _ in range(9)][:50]
    assert len(labels) == 50
    for cls in labels:
        assert classify_failure(generate_diagnostic(cls, rng)) is cls


@given(st.sampled_from(list(FailureClass)), st.integers(0, 2**32 - 1))
def test_round_trip_property(cls, seed):
    assert classify_failure(generate_diagnostic(cls, np.random.default_rng(seed))) is cls


def test_worth_fixing_all_conjuncts():
    assert worth_fixing(ticket())
    assert not worth_fixing(ticket(FailureClass.ENVIRONMENTAL))
    assert not worth_fixing(ticket(FailureClass.SEMANTIC_NONLOCAL))
    cfg = RepairConfig()
    assert not worth_fixing(ticket(), PlanContext(rank=cfg.top_limit(4), plan_size=4))


def test_budget_exhaustion_stops_before_generative():
    t = ticket(budget=50.0)
    out = pfir_loop(t, fixed(0.99, 0.99, 0.0, 0.0, 0.0))
    assert [a.strategy for a in out.ticket.attempts] == [Strategy.DETERMINISTIC] * 2
    assert not out.repaired
    assert not worth_fixing(out.ticket)
    assert out.report["attempts"] == 2


def test_first_template_succeeds():
    out = pfir_loop(ticket(), fixed(0.0))
    assert out.repaired
    assert len(out.ticket.attempts) == 1 and out.ticket.tokens_spent == 0


def test_two_deterministic_failures_then_generative():
    out = pfir_loop(ticket(), fixed(0.99, 0.99, 0.5))
    assert out.repaired
    assert [a.strategy for a in out.ticket.attempts] == [Strategy.DETERMINISTIC, Strategy.DETERMINISTIC,
                                                        Strategy.GENERATIVE]
    assert out.ticket.tokens_spent == RepairConfig().generative_cost


def test_five_failures_abandon_with_report():
    out = pfir_loop(ticket(), fixed(*[0.999] * 5))
    assert out.status == "abandoned"
    assert out.report == {"artifact": "a1", "contract": "c1", "failure_class": "missing_import",
                          "attempts": 5, "cost": 3 * RepairConfig().generative_cost}


def test_unfunded_generative_counts_as_failed_attempt():
    t, out = pfir_step(ticket(FailureClass.HARNESS_MISCONFIG), fixed(0.99))
    assert out is None
    t, out = pfir_step(t, fixed(0.99, 0.0), debit=lambda amount: False)
    assert t.attempts[-1].strategy is Strategy.GENERATIVE and t.attempts[-1].outcome == "fail"
    assert t.tokens_spent == 0


def test_generative_outage_fails_attempt():
    t = ticket(FailureClass.MALFORMED_ASSERTION)
    t, _ = pfir_step(t, fixed(0.99))
    calls = []
    t, out = pfir_step(t, fixed(0.99, 0.0), generative_available=lambda: calls.append(1) or False)
    assert calls == [1] and t.attempts[-1].outcome == "fail" and out is None


@given(st.lists(st.floats(0, 0.999), min_size=5, max_size=5), st.sampled_from(sorted(LOCAL_CLASSES)))
def test_loop_bounded_and_deterministic_first(draws, cls):
    out = pfir_loop(ticket(cls), fixed(*draws))
    n = len(out.ticket.attempts)
    assert 1 <= n <= 5
    strategies = [a.strategy for a in out.ticket.attempts]
    # no deterministic attempt after a generative one
    assert strategies == sorted(strategies, key=lambda s: s is Strategy.GENERATIVE)


def test_stratified_counts_follow_mix():
    classes = stratified_classes(50, DEFAULT_CLASS_MIX, np.random.default_rng(0))
    counts = {c.value: classes.count(c) for c in FailureClass}
    assert sum(counts.values()) == 50
    for name, share in DEFAULT_CLASS_MIX.items():
        assert abs(counts[name] - share * 50) < 1


def test_batches_shape_and_determinism():
    a = run_batches(500, 10, seed=42)
    assert len(a) == 10 and all(r.objectives == 50 for r in a)
    assert batch_csv(a) == batch_csv(run_batches(500, 10, seed=42))
    assert batch_csv(a).splitlines()[0] == "batch,attempts,successes,deterministic_share"


def test_config_from_dict():
    cfg = RepairConfig.from_dict({"deterministic_success": 0.5, "generative_cost": 100})
    assert cfg.deterministic_success["missing_import"] == 0.5
    with pytest.raises(ValueError):
        RepairConfig.from_dict({"bogus": 1})
