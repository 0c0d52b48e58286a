"""A network partition cuts the repair agent off mid-repair.

The multi-agent engine keeps its repair state in the repair agent's beliefs
and finishes the attempt sequence, while the centralized scheduler loses the
in-flight repair and starts over.
"""

import logging

from auditmas import experiments as ex
from auditmas.baselines import run_variant

logging.basicConfig(level=logging.WARNING)

SHOWN = ("FAULT_STARTED", "FAULT_ENDED", "REPAIR_ATTEMPT", "REPAIR_RESTARTED", "MANUAL_INTERVENTION")


def main(seed=42):
    cfg = ex.partition_config()
    cfg = cfg.with_(faults=ex.partition_schedule(cfg, seed))
    fault = cfg.faults.faults[0]
    print(f"partition of {fault.target} from {fault.start:.1f}s for {fault.duration:.0f}s\n")
    for variant in ("FullMAS", "CentralizedScheduler"):
        res = run_variant(cfg, variant, seed)
        print(variant)
        for r in res.records:
            if r["type"] == "event" and r["kind"] in SHOWN:
                p = r["payload"]
                extra = {k: p[k] for k in ("index", "strategy", "outcome", "fault_id", "kind") if k in p}
                print(f"  {r['timestamp']:8.2f}  {r['kind']:<20} {extra}")
        print()


if __name__ == "__main__":
    main()
