"""Energy and emissions of MNIST-MLP training against the number of edge servers.

    python3 scripts/scaling.py [--seeds 20] [--out scaling.csv]

Averages over seeded random placements; prints the linear fit of energy on N.
"""

import argparse
import csv
import sys
from dataclasses import replace

import numpy as np

from carbonsim.scenario import fixture_path, load_scenario
from carbonsim.simulator import run

COUNTS = [1, 3, 5, 7, 9, 11]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(fixture_path("mnist_mlp_10regions.json")))
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--out", default="scaling.csv")
    args = ap.parse_args(argv)
    base = load_scenario(args.scenario)
    rows = []
    for n in COUNTS:
        runs = [run(replace(base, seed=s).with_server_count(n)) for s in range(args.seeds)]
        rows.append((n, np.mean([r.total_kwh for r in runs]), np.mean([r.total_gco2e for r in runs])))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["servers", "kwh", "gco2e"])
        w.writerows((n, repr(float(e)), repr(float(g))) for n, e, g in rows)
    n, e, g = (np.array(c, float) for c in zip(*rows))
    slope, icpt = np.polyfit(n, e, 1)
    r2 = 1 - np.sum((e - (slope * n + icpt)) ** 2) / np.sum((e - e.mean()) ** 2)
    for row in rows:
        print(f"N={row[0]:>2}  {row[1]:.5f} kWh  {row[2]:.3f} gCO2e")
    print(f"energy = {slope:.3g} * N + {icpt:.3g} kWh (R^2 {r2:.4f}); "
          f"growth 1->11: energy x{e[-1] / e[0]:.2f}, emissions x{g[-1] / g[0]:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
