"""Named experiment campaigns, replicate runs and aggregation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from auditmas.baselines import run_variant
from auditmas.config import ScenarioConfig
from auditmas.metrics import RunMetrics, compute
from auditmas.repair import RepairConfig, batch_csv, run_batches
from auditmas.sim.corpus import CorpusSpec
from auditmas.sim.faults import Fault, FaultKind, FaultSchedule, random_schedule
from auditmas.sim.rng import RunRandom, derive_seed
from auditmas.sim.tools import ToolProfile, default_profiles

logger = logging.getLogger(__name__)

ABLATION_ORDER = ("FullMAS", "NoProtocols", "NoAutonomy", "NoSelfHealing", "RigidPipeline")


# -- scenario builders ------------------------------------------------------

def ablation_faults(seed: int, horizon: float = 1500.0) -> FaultSchedule:
    """A crash of one ``cmd-1`` tool, a generative-API outage and a partition
    isolating the repair agent, each lasting 60 to 180 s."""
    g = RunRandom(seed).fork("ablation-faults")
    tool = ("static-1", "symbolic-1", "fuzz-1")[int(g.integers(3))]
    spec = [(FaultKind.TOOL_CRASH, tool), (FaultKind.LLM_API_FAILURE, "llm"), (FaultKind.PARTITION, "repair")]
    faults = [Fault(kind, target, round(float(g.uniform(50.0, horizon)), 3), round(float(g.uniform(60.0, 180.0)), 3),
                    1.0, f"f{i}") for i, (kind, target) in enumerate(spec)]
    return FaultSchedule(tuple(faults))


def ablation_config(base: ScenarioConfig | None = None) -> ScenarioConfig:
    return (base or ScenarioConfig()).with_(**{"agents.n_agents": 10})


def planning_config(base: ScenarioConfig | None = None) -> ScenarioConfig:
    """47 contracts, 12 vulnerabilities, criticals on the last contract ids."""
    return (base or ScenarioConfig()).with_(corpus=CorpusSpec(n_contracts=47, n_vulns=12, critical_placement="late"))


def partition_config(base: ScenarioConfig | None = None) -> ScenarioConfig:
    """One contract whose only generated test always breaks with a missing import.

    Tool detection is certain and templates almost never work, so the repair
    reaches its generative attempts.
    """
    tools = {m: ToolProfile(m, {"*": 1.0}, 0.0, p.runtime, p.capability) for m, p in default_profiles().items()}
    cfg = (base or ScenarioConfig()).with_(
        corpus=CorpusSpec(n_contracts=1, n_vulns=1),
        repair=RepairConfig(deterministic_success={"missing_import": 0.01}),
        **{"agents.p_broken": 1.0, "agents.failure_mix": {"missing_import": 1.0}, "agents.tools": tools})
    return cfg


def attempt_window(records, index: int) -> tuple[float, float] | None:
    """Virtual-time span of repair attempt ``index`` (first incarnation)."""
    for r in records:
        if r["kind"] == "REPAIR_ATTEMPT" and r["payload"]["index"] == index:
            seconds = 30.0 if r["payload"]["strategy"] == "generative" else 5.0
            return r["timestamp"] - seconds, r["timestamp"]
    return None


def partition_schedule(cfg: ScenarioConfig, seed: int, variants=("FullMAS", "CentralizedScheduler"),
                       attempt: int = 2, duration: float = 120.0) -> FaultSchedule:
    """Partition of the repair agent that starts inside attempt ``attempt`` of every variant.

    The window is measured on fault-free runs of the same seed.
    """
    lo, hi = -math.inf, math.inf
    for v in variants:
        w = attempt_window(run_variant(cfg, v, seed).records, attempt)
        if w is None:
            raise ValueError(f"{v} never reaches repair attempt {attempt} on seed {seed}")
        lo, hi = max(lo, w[0]), min(hi, w[1])
    if lo >= hi:
        raise ValueError(f"attempt {attempt} windows do not overlap on seed {seed}")
    start = round((lo + hi) / 2, 3)
    return FaultSchedule((Fault(FaultKind.PARTITION, "repair", start, duration, 1.0, "f0"),))


def fuzz_config(seed: int, base: ScenarioConfig | None = None, horizon: float = 700.0,
                max_faults: int = 8, max_duration: float = 300.0) -> ScenarioConfig:
    """Small corpus under a random fault schedule (loss up to 100 %, arbitrary partitions)."""
    cfg = (base or ScenarioConfig()).with_(corpus=CorpusSpec(n_contracts=4, n_vulns=3),
                                           **{"agents.n_agents": 6})
    g = RunRandom(seed).fork("fuzz-faults")
    faults = random_schedule(g, cfg.agents.agent_ids(), cfg.agents.tool_ids(), horizon, max_faults, max_duration)
    return cfg.with_(faults=faults, seed=seed)


# -- replicates ---------------------------------------------------------------

@dataclass
class Campaign:
    name: str
    runs: list[RunMetrics] = field(default_factory=list)
    logs: dict[str, str] = field(default_factory=dict)  # "<variant>_<seed>" -> JSONL text

    def by_variant(self) -> dict[str, list[RunMetrics]]:
        out: dict[str, list[RunMetrics]] = {}
        for m in self.runs:
            out.setdefault(m.variant, []).append(m)
        return out


def replicate(cfg: ScenarioConfig, variants: Iterable[str], reps: int, base_seed: int | None = None,
              faults: Callable[[int], FaultSchedule] | None = None, name: str = "run",
              keep_logs: bool = False) -> Campaign:
    """``reps`` derived seeds per variant; every variant sees the same seeds (paired design)."""
    base_seed = cfg.seed if base_seed is None else base_seed
    camp = Campaign(name)
    for i in range(reps):
        seed = derive_seed(base_seed, i)
        run_cfg = cfg.with_(seed=seed, faults=faults(seed)) if faults else cfg.with_(seed=seed)
        for v in variants:
            res = run_variant(run_cfg, v, seed)
            camp.runs.append(compute(res.records, cfg.protocols.message_cost))
            if keep_logs:
                camp.logs[f"{v}_{seed}"] = res.log_text()
            logger.info("%s %s seed=%d done", name, v, seed)
    return camp


def run_scenario(cfg: ScenarioConfig, seed: int | None = None, repetitions: int = 1,
                 variant: str | None = None, out: str | Path | None = None) -> Campaign:
    """Run one variant ``repetitions`` times on seeds derived from ``seed``.

    With ``out`` the per-run logs, the metrics CSV and the JSON summary are written there.
    """
    if variant is not None:
        cfg = cfg.variant(variant)
    camp = replicate(cfg, [cfg.architecture.variant], repetitions, seed, name="run", keep_logs=out is not None)
    if out is not None:
        write_outputs(camp, out)
    return camp


NUMERIC = ("precision", "recall", "f1", "tfcv", "makespan", "recovery_time", "messages_per_audit",
           "coordination_overhead", "llm_invocations_per_repair", "negotiation_success_rate", "conflict_frequency")


def aggregate(runs: Sequence[RunMetrics]) -> dict[str, dict[str, float | None]]:
    """Mean and sample std of each metric over runs where it is defined."""
    out: dict[str, dict[str, float | None]] = {}
    for key in NUMERIC:
        vals = np.array([getattr(m, key) for m in runs if getattr(m, key) is not None], dtype=float)
        out[key] = {"mean": float(vals.mean()) if len(vals) else None,
                    "std": float(vals.std(ddof=1)) if len(vals) > 1 else (0.0 if len(vals) else None),
                    "n": int(len(vals))}
    return out


def summary(camp: Campaign) -> dict:
    return {v: aggregate(runs) for v, runs in camp.by_variant().items()}


def runs_csv(runs: Sequence[RunMetrics]) -> str:
    """One row per run, then a ``mean`` and a ``std`` row per variant."""
    buf = io.StringIO()
    rows = [{"row": "run", **m.to_dict()} for m in runs]
    if not rows:
        return ""
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    by_variant: dict[str, list[RunMetrics]] = {}
    for m in runs:
        by_variant.setdefault(m.variant, []).append(m)
    for v, group in by_variant.items():
        agg = aggregate(group)
        for stat in ("mean", "std"):
            w.writerow({"row": stat, "variant": v, **{k: agg[k][stat] for k in NUMERIC}})
    return buf.getvalue()


def summary_table(summ: dict) -> str:
    keys = ("f1", "tfcv", "recovery_time", "messages_per_audit", "llm_invocations_per_repair")
    lines = ["variant".ljust(28) + "".join(k.rjust(28) for k in keys)]
    for v, agg in summ.items():
        cells = []
        for k in keys:
            a = agg[k]
            cells.append("-".rjust(28) if a["mean"] is None else f"{a['mean']:.3f} ± {a['std']:.3f}".rjust(28))
        lines.append(v.ljust(28) + "".join(cells))
    return "\n".join(lines)


def write_outputs(camp: Campaign, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{camp.name}_runs.csv").write_text(runs_csv(camp.runs))
    (out / f"{camp.name}_summary.json").write_text(json.dumps(summary(camp), indent=2, sort_keys=True))
    if camp.logs:
        logs = out / "logs"
        logs.mkdir(exist_ok=True)
        for key, text in camp.logs.items():
            (logs / f"{camp.name}_{key}.jsonl").write_text(text)
    return out


# -- named campaigns ------------------------------------------------------------

def ablation(reps: int = 20, base_seed: int = 42) -> Campaign:
    return replicate(ablation_config(), ABLATION_ORDER, reps, base_seed, ablation_faults, "ablation")


def planning(reps: int = 10, base_seed: int = 42) -> tuple[Campaign, Campaign]:
    cfg = planning_config()
    on = replicate(cfg, ["FullMAS"], reps, base_seed, name="planner_on")
    off = replicate(cfg.with_(**{"architecture.planner": False}), ["FullMAS"], reps, base_seed, name="planner_off")
    return on, off


def baselines(reps: int = 10, base_seed: int = 42) -> Campaign:
    return replicate(ScenarioConfig(), ("FullMAS", "CentralizedScheduler", "SequentialPipeline"), reps,
                     base_seed, name="baselines")


def pfir(n_objectives: int = 500, n_batches: int = 10, seed: int = 42) -> str:
    return batch_csv(run_batches(n_objectives, n_batches, seed))


def scaling(agent_counts: Sequence[int] = (5, 10, 20), seed: int = 42) -> dict[int, int]:
    """Messages of one FullMAS audit per agent count."""
    cfg = ScenarioConfig()
    out = {}
    for n in agent_counts:
        res = run_variant(cfg.with_(**{"agents.n_agents": n}), "FullMAS", seed)
        out[n] = compute(res.records).messages_per_audit
    return out


def linear_r2(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot else 1.0
