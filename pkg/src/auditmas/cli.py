"""Command line: ``auditmas run|experiment|replay|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from auditmas import experiments
from auditmas.config import VARIANTS, ConfigError, ScenarioConfig, load_config
from auditmas.domain import read_log, replay
from auditmas.metrics import IncompleteRun, compute

logger = logging.getLogger("auditmas")

SCENARIOS = ("sweep", "ablation", "planning", "baselines", "pfir", "scaling")


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _variants(raw: list[str] | None) -> list[str]:
    names = [v for item in raw or () for v in item.split(",") if v]
    for v in names:
        if v not in VARIANTS:
            raise SystemExit(f"error: unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    return names


def cmd_run(args) -> int:
    cfg = _config(args)
    variants = _variants(args.variant)
    if len(variants) > 1:
        raise SystemExit("error: run takes a single --variant; use experiment for sweeps")
    camp = experiments.run_scenario(cfg, cfg.seed, args.reps, variants[0] if variants else None, args.out)
    print(experiments.summary_table(experiments.summary(camp)))
    if args.out:
        print(f"wrote {len(camp.logs)} log(s), metrics CSV and summary to {args.out}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args)
    seed = cfg.seed
    if args.scenario == "pfir":
        text = experiments.pfir(seed=seed)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "pfir_batches.csv").write_text(text)
        print(text, end="")
        return 0
    if args.scenario == "scaling":
        counts = experiments.scaling(seed=seed)
        r2 = experiments.linear_r2(list(counts), list(counts.values()))
        result = {"messages_per_audit": counts, "r2": r2}
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "scaling.json").write_text(json.dumps(result, indent=2))
        print(json.dumps(result, indent=2))
        return 0
    reps = args.reps
    if args.scenario == "ablation":
        camps = [experiments.replicate(experiments.ablation_config(cfg), experiments.ABLATION_ORDER, reps, seed,
                                       experiments.ablation_faults, "ablation", keep_logs=bool(args.out))]
    elif args.scenario == "planning":
        base = experiments.planning_config(cfg)
        camps = [experiments.replicate(base, ["FullMAS"], reps, seed, name="planner_on", keep_logs=bool(args.out)),
                 experiments.replicate(base.with_(**{"architecture.planner": False}), ["FullMAS"], reps, seed,
                                       name="planner_off", keep_logs=bool(args.out))]
    else:
        variants = _variants(args.variant) or (["FullMAS", "CentralizedScheduler", "SequentialPipeline"]
                                               if args.scenario == "baselines" else list(VARIANTS))
        camps = [experiments.replicate(cfg, variants, reps, seed, name=args.scenario, keep_logs=bool(args.out))]
    for camp in camps:
        print(f"[{camp.name}]")
        print(experiments.summary_table(experiments.summary(camp)))
        if args.out:
            experiments.write_outputs(camp, args.out)
    return 0


def cmd_replay(args) -> int:
    records = read_log(args.log)
    state = replay(records)
    text = json.dumps(state.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "final_state.json").write_text(text)
    else:
        print(text)
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.logs:
        try:
            rows.append(compute(read_log(path)))
        except IncompleteRun as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            return 1
    camp = experiments.Campaign("report", rows)
    csv_text = experiments.runs_csv(rows)
    if args.out:
        experiments.write_outputs(camp, args.out)
    else:
        print(csv_text, end="")
        print(json.dumps(experiments.summary(camp), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="auditmas", description="Multi-agent audit simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, reps_default: int):
        sp.add_argument("--config", metavar="PATH", help="scenario TOML file")
        sp.add_argument("--seed", type=int, metavar="N", help="base seed (overrides the config)")
        sp.add_argument("--reps", type=int, default=reps_default, metavar="N", help="repetitions per variant")
        sp.add_argument("--variant", action="append", metavar="NAME", help=f"one of {', '.join(VARIANTS)}")
        sp.add_argument("--out", metavar="DIR", help="output directory for logs, CSV and JSON")

    sp = sub.add_parser("run", help="run one scenario")
    common(sp, 1)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("experiment", help="multi-variant sweep or a named campaign")
    common(sp, 10)
    sp.add_argument("--scenario", choices=SCENARIOS, default="sweep")
    sp.set_defaults(fn=cmd_experiment)

    sp = sub.add_parser("replay", help="rebuild the final state from a log")
    sp.add_argument("log", help="JSONL event log")
    sp.add_argument("--out", metavar="DIR")
    sp.set_defaults(fn=cmd_replay)

    sp = sub.add_parser("report", help="metrics CSV/JSON from logs")
    sp.add_argument("logs", nargs="+", help="JSONL event logs")
    sp.add_argument("--out", metavar="DIR")
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
