"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line with the measured value; the lines are
printed in the pytest terminal summary (and directly when this file is run as
a script).
"""

import json
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from carbonsim.cli import main as cli
from carbonsim.deta import ALL_POLICIES, Policy, random_slot_state, solve
from carbonsim.harvest import HarvestParams
from carbonsim.ledger import REPORTED_STAGES, LifecycleStage
from carbonsim.report import compare
from carbonsim.scenario import fixture_path, load_scenario
from carbonsim.simulator import run, sweep

RESULTS: list[str] = []
REFERENCE = fixture_path("deta_reference_10servers.json")
MLP = fixture_path("mnist_mlp_10regions.json")
SINGLE = fixture_path("single_server.json")


def gate(number: int, title: str, ok: bool, detail: str) -> None:
    RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
    assert ok, detail


def r_squared(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, icpt = np.polyfit(x, y, 1)
    return float(1 - np.sum((y - (slope * x + icpt)) ** 2) / np.sum((y - y.mean()) ** 2))


def test_1_calibration_fidelity(tmp_path):
    t0 = time.perf_counter()
    worst = {}
    for model in ("MLP", "CNN", "LSTM"):
        out = tmp_path / f"{model}.json"
        assert cli(["calibrate", "--model", model, "--out", str(out)]) == 0
        rows = json.loads(out.read_text())["rows"]
        assert len(rows) == 6
        worst[model] = max(abs(r["relative_residual"]) for r in rows)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 0.15 and elapsed < 1.0
    detail = ", ".join(f"{m} {100 * v:.1f}%" for m, v in worst.items())
    gate(1, "calibration residuals <= 15% (18 rows), < 1 s", ok, f"max |residual| {detail}; {elapsed:.2f} s")


def test_2_linear_scaling():
    t0 = time.perf_counter()
    s = load_scenario(MLP)
    assert all(sv.comm_energy_per_byte == 0 and sv.harvester == HarvestParams.off() for sv in s.servers)
    counts = [1, 3, 5, 7, 9, 11]
    energy = [r.total_kwh for r in sweep(s, {"server_count": counts})]
    r2 = r_squared(counts, energy)
    elapsed = time.perf_counter() - t0
    gate(2, "energy affine in N, R^2 >= 0.99, < 5 s", r2 >= 0.99 and elapsed < 5.0, f"R^2 = {r2:.6f}; {elapsed:.2f} s")


def test_3_superlinear_emissions():
    s = load_scenario(MLP)
    e_ratio, g_ratio = [], []
    for seed in range(20):
        ss = replace(s, seed=seed)
        one, eleven = run(ss.with_server_count(1)), run(ss.with_server_count(11))
        e_ratio.append(eleven.total_kwh / one.total_kwh)
        g_ratio.append(eleven.total_gco2e / one.total_gco2e)
    e, g = float(np.mean(e_ratio)), float(np.mean(g_ratio))
    gate(3, "emissions grow faster than energy (20 seeds)", g > e,
         f"mean emissions ratio {g:.2f} vs energy ratio {e:.2f}")


def test_4_policy_dominance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    violations, states = 0, 1000
    for _ in range(states):
        st = random_slot_state(rng, int(rng.integers(1, 7)))
        o = {p: solve(st, p).objective for p in ALL_POLICIES}
        b, det, dat, deta = (o[p] for p in ALL_POLICIES)
        tol = 1e-9
        if not (deta <= det + tol and det <= b + tol and deta <= dat + tol and dat <= b + tol):
            violations += 1
    elapsed = time.perf_counter() - t0
    gate(4, "DETA <= DET|DAT <= Baseline on 1000 states, < 60 s", violations == 0 and elapsed < 60.0,
         f"{violations} violations; {elapsed:.1f} s")


def test_5_oracle_equivalence(tmp_path, capsys):
    t0 = time.perf_counter()
    out = tmp_path / "verify.json"
    code = cli(["verify", "--random-states", "100", "--grid-step", "0.02", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    res = json.loads(out.read_text())
    ok = code == 0 and res["max_relative_gap"] <= 0.02 and max(res["server_counts"]) <= 3 and elapsed < 120
    gate(5, "LP vs oracle gap <= 2% on 100 states, < 120 s", ok,
         f"max gap {res['max_relative_gap']:.2e} (min {res['min_relative_gap']:.2e}); exit {code}; {elapsed:.1f} s")


def test_6_deta_reduction_regime(tmp_path):
    s = load_scenario(REFERENCE)
    assert (s.alpha_energy, s.alpha_task, s.trading_loss, len(s.servers)) == (0.5, 0.5, 0.05, 10)
    assert cli(["run", "--scenario", str(REFERENCE), "--out", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "report.json").read_text())["comparison"]
    shipped = next(r for r in rows if r["policy"] == "DETA")
    table = compare(s, range(2, 11))
    red = table.reductions(Policy.DETA)
    inversions = sum(b < a for a, b in zip(red, red[1:]))
    excl = table.reductions(Policy.DETA, excl_backbone=True)
    ok = shipped["reduction_pct"] >= 60.0 and red[-1] >= 60.0 and inversions <= 1
    gate(6, "DETA reduction >= 60% at 10 servers, nondecreasing in N (<= 1 inversion)", ok,
         f"shipped run {shipped['reduction_pct']:.1f}% (excl. backbone {shipped['reduction_excl_backbone_pct']:.1f}%); "
         f"N=2..10: {', '.join(f'{v:.1f}' for v in red)}; excl. backbone at N=10 {excl[-1]:.1f}%; "
         f"{inversions} inversion(s)")


def test_7_lifecycle_portions():
    s = load_scenario(REFERENCE)
    reports = {t: run(replace(s, workload=replace(s.workload, target_accuracy=t))) for t in (0.95, 0.975)}
    frac = {t: r.stage_report.fraction for t, r in reports.items()}
    dev = {t: f[LifecycleStage.DEVELOPMENT] for t, f in frac.items()}
    sums = [sum(f[st] for st in REPORTED_STAGES) for f in frac.values()]
    ok = dev[0.975] > dev[0.95] and all(abs(x - 1) <= 1e-9 for x in sums)
    gate(7, "Development share grows with target accuracy; shares sum to 1", ok,
         f"Development {100 * dev[0.95]:.2f}% (95%, {reports[0.95].rounds_used} rounds) -> "
         f"{100 * dev[0.975]:.2f}% (97.5%, {reports[0.975].rounds_used} rounds); "
         f"max |sum - 1| {max(abs(x - 1) for x in sums):.1e}")


def test_8_conservation_audit():
    runs = []
    for path in (REFERENCE, MLP, SINGLE):
        s = load_scenario(path)
        runs += [run(s, p, check=False) for p in ALL_POLICIES]
    ref = load_scenario(REFERENCE)
    runs += sweep(ref, {"server_count": [2, 5], "policy": list(ALL_POLICIES), "trading_loss": [0.0, 0.2]})
    worst = max(max(abs(r.audit["renewable_residual_kwh"]), abs(r.audit["ledger_residual_kwh"])) for r in runs)
    gate(8, "energy conservation within 1e-9 kWh on every run", worst <= 1e-9,
         f"{len(runs)} runs, worst residual {worst:.1e} kWh")


def test_9_determinism(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        subprocess.run([sys.executable, "-m", "carbonsim.cli", "run", "--scenario", str(REFERENCE), "--out", str(d)],
                       check=True, capture_output=True)
        outs.append((d / "report.json").read_bytes())
    gate(9, "identical seeds give byte-identical report JSON", outs[0] == outs[1],
         f"{len(outs[0])} bytes, identical={outs[0] == outs[1]}")


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    print("\n".join(RESULTS))
    sys.exit(code)
