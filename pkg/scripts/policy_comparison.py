"""Emission reduction of DET, DAT and DETA over Baseline for 2..10 servers.

    python3 scripts/policy_comparison.py [--jobs 4] [--out policy_comparison.csv]
"""

import argparse
import sys

from carbonsim.deta import Policy
from carbonsim.report import atomic_write_text, compare
from carbonsim.scenario import fixture_path, load_scenario


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(fixture_path("deta_reference_10servers.json")))
    ap.add_argument("--max-servers", type=int, default=10)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="policy_comparison.csv")
    args = ap.parse_args(argv)
    table = compare(load_scenario(args.scenario), range(2, args.max_servers + 1), jobs=args.jobs)
    atomic_write_text(args.out, table.to_csv())
    print(f"{'N':>3} {'DET':>7} {'DAT':>7} {'DETA':>7}  (DETA excl. backbone)")
    for n in table.server_counts:
        red = [table.get(n, p).reduction_pct for p in (Policy.DET, Policy.DAT, Policy.DETA)]
        excl = table.get(n, Policy.DETA).reduction_excl_backbone_pct
        print(f"{n:>3} " + " ".join(f"{v:6.1f}%" for v in red) + f"  ({excl:.1f}%)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
