"""Share of each lifecycle stage in total emissions for several target accuracies.

    python3 scripts/lifecycle_shares.py [--targets 0.9,0.95,0.975] [--out lifecycle_shares.csv]
"""

import argparse
import csv
import sys
from dataclasses import replace

from carbonsim.ledger import REPORTED_STAGES
from carbonsim.scenario import fixture_path, load_scenario
from carbonsim.simulator import run


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(fixture_path("deta_reference_10servers.json")))
    ap.add_argument("--targets", default="0.9,0.93,0.95,0.965,0.975")
    ap.add_argument("--policy")
    ap.add_argument("--out", default="lifecycle_shares.csv")
    args = ap.parse_args(argv)
    base = load_scenario(args.scenario)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["target_accuracy", "rounds", *(f"{s.value.lower()}_fraction" for s in REPORTED_STAGES)])
        for t in (float(x) for x in args.targets.split(",")):
            r = run(replace(base, workload=replace(base.workload, target_accuracy=t)), args.policy)
            frac = r.stage_report.fraction
            w.writerow([t, r.rounds_used, *(repr(frac[s]) for s in REPORTED_STAGES)])
            shares = "  ".join(f"{s.value} {100 * frac[s]:5.1f}%" for s in REPORTED_STAGES)
            print(f"target {t:.3f} ({r.rounds_used:>2} rounds)  {shares}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
