import pytest

from auditmas.baselines import ENGINES, ArchitectureVariant, run_variant
from auditmas.config import VARIANTS, ScenarioConfig
from auditmas.experiments import partition_config, partition_schedule, planning_config
from auditmas.metrics import compute
from auditmas.sim.corpus import CorpusSpec
from auditmas.sim.faults import Fault, FaultKind, FaultSchedule
from auditmas.sim.tools import scan


def detected(res):
    return {r["payload"]["vulnerability"]["id"] for r in res.records if r["kind"] == "VULN_DETECTED"}


def test_every_variant_has_an_engine():
    assert set(ENGINES) == set(VARIANTS) == {v.value for v in ArchitectureVariant}


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_centralized_finds_the_same_set_as_full_mas(seed):
    cfg = ScenarioConfig()
    assert detected(run_variant(cfg, "CentralizedScheduler", seed)) == detected(run_variant(cfg, "FullMAS", seed))


@pytest.mark.parametrize("seed", [0, 3])
def test_pipeline_findings_are_the_union_of_tool_detections(seed):
    cfg = ScenarioConfig()
    res = run_variant(cfg, "SequentialPipeline", seed)
    w = res.world
    union = {f.vulnerability for p in cfg.agents.tools.values() for c in w.corpus.values()
             for f in scan(p, c, w.rr)}
    assert detected(res) == union


def test_pipeline_never_recovers_a_crashed_tool():
    faults = FaultSchedule((Fault(FaultKind.TOOL_CRASH, "symbolic-1", 0.0, 50.0, 1.0, "f0"),))
    res = run_variant(ScenarioConfig(faults=faults), "SequentialPipeline", 1)
    tools = {r["payload"]["vulnerability"]["detecting_tool"] for r in res.records if r["kind"] == "VULN_DETECTED"}
    assert not any(t.startswith("symbolic") for t in tools)
    assert not res.deadlock


@pytest.mark.parametrize("seed", [0, 1])
def test_pipeline_reaches_late_critical_after_full_mas(seed):
    cfg = planning_config()
    mas = compute(run_variant(cfg, "FullMAS", seed).records).tfcv
    pipe = compute(run_variant(cfg, "SequentialPipeline", seed).records).tfcv
    assert mas is not None and pipe is not None and pipe > mas


def test_centralized_restarts_repair_after_partition():
    cfg = partition_config()
    res = run_variant(cfg.with_(faults=partition_schedule(cfg, 42)), "CentralizedScheduler", 42)
    restarts = [r for r in res.records if r["kind"] == "REPAIR_RESTARTED"]
    assert restarts
    indices = [r["payload"]["index"] for r in res.records if r["kind"] == "REPAIR_ATTEMPT"
               and r["timestamp"] > restarts[0]["timestamp"]]
    assert indices[0] == 0  # attempt counter reset


def test_empty_corpus_is_an_error():
    with pytest.raises(ValueError):
        run_variant(ScenarioConfig(corpus=CorpusSpec(n_contracts=0, n_vulns=0)), "CentralizedScheduler", 0)


@pytest.mark.parametrize("variant", ["CentralizedScheduler", "SequentialPipeline", "NoAutonomy", "RigidPipeline"])
def test_baselines_complete_without_deadlock(variant):
    res = run_variant(ScenarioConfig(corpus=CorpusSpec(n_contracts=6, n_vulns=3)), variant, 5)
    assert res.reason == "complete" and not res.deadlock
    assert res.records[-1]["payload"]["variant"] == variant
