"""Small ablation sweep: every variant on the same seeds and fault schedules."""

import sys

from auditmas import experiments as ex


def main(reps=5):
    camp = ex.replicate(ex.ablation_config(), ex.ABLATION_ORDER, reps, 42, ex.ablation_faults, "ablation")
    print(ex.summary_table(ex.summary(camp)))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 5)
