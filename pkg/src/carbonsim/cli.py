"""``carbonsim`` command line.

Exit codes: 0 success, 1 internal error, 2 invalid input (scenario, table or
flags), 3 oracle gap above tolerance in ``verify``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .deta import ALL_POLICIES, Policy
from .energy import CalibrationError, calibrate, load_table
from .oracle import MAX_SERVERS, verify_random_states
from .report import atomic_write_text, build_comparison, compare, ledger_csv, write_json
from .scenario import ScenarioError, ScenarioValidationError, data_path, load_scenario, validate_scenario
from .simulator import ConfigError, run

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID, EXIT_GAP = 0, 1, 2, 3
SEED_ENV = "CARBONSIM_SEED"

log = logging.getLogger("carbonsim")


class UsageError(ValueError):
    pass


def _scenario(path: str):
    s = load_scenario(path)
    seed = os.environ.get(SEED_ENV)
    if seed is not None:
        try:
            s = replace(s, seed=int(seed))
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {seed!r}") from None
    return s


def _int_list(text: str) -> list[int]:
    try:
        out = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("server counts must be >= 1")
    return out


def cmd_run(args) -> int:
    s = _scenario(args.scenario)
    policy = Policy(args.policy) if args.policy else s.policy
    out = Path(args.out)
    decisions: list | None = [] if args.dump_decisions else None
    main = run(s, policy, decision_log=decisions)
    others = [run(s, p) for p in ALL_POLICIES if p is not policy]
    table = build_comparison([main, *others])
    report = main.to_dict()
    report["comparison"] = table.to_dict()
    write_json(out / "report.json", report)
    atomic_write_text(out / "ledger.csv", ledger_csv(main.ledger))
    atomic_write_text(out / "comparison.csv", table.to_csv())
    if decisions is not None:
        write_json(out / "decisions.json", decisions)
    print(f"{s.name or args.scenario}: policy {policy.value}, {main.servers} servers, "
          f"{main.rounds_used} rounds, accuracy {main.final_accuracy:.4f}"
          + ("" if main.target_reached else " (target_not_reached)"))
    print(main.stage_report.table())
    print(f"total {main.total_kwh:.6g} kWh, {main.total_gco2e:.6g} gCO2e")
    print(table.summary())
    print(f"wrote {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    s = _scenario(args.scenario)
    counts = args.servers or [len(s.servers)]
    t0 = time.perf_counter()
    table = compare(s, counts, jobs=args.jobs)
    out = Path(args.out)
    atomic_write_text(out / "comparison.csv", table.to_csv())
    summary = {
        "scenario": s.name,
        "server_counts": counts,
        "reduction_pct": {p.value: table.reductions(p) for p in ALL_POLICIES},
        "reduction_excl_backbone_pct": {p.value: table.reductions(p, excl_backbone=True) for p in ALL_POLICIES},
        "max_reduction_pct": {p.value: max(table.reductions(p)) for p in ALL_POLICIES},
    }
    write_json(out / "comparison.json", summary)
    print(table.summary())
    print(f"{len(table.rows)} runs in {time.perf_counter() - t0:.1f} s; wrote {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    table = load_table(args.table)
    if args.model not in table:
        raise CalibrationError(f"model {args.model!r} not in {args.table} (has {sorted(table)})")
    result = calibrate(table[args.model], args.model, samples=args.samples, rounds=args.rounds,
                       comm_energy_per_model_exchange=None if args.fit_comm else 0.0)
    out = Path(args.out or f"params_{args.model}.json")
    write_json(out, result.to_dict())
    p = result.params
    print(f"{args.model}: static {p.static_energy_per_slot:.6g} kWh/slot, "
          f"train {p.train_energy_per_sample_epoch:.6g} kWh/sample-epoch, "
          f"comm {p.comm_energy_per_model_exchange:.6g} kWh/exchange")
    print(f"{'N':>3} {'measured':>10} {'predicted':>10} {'residual':>9}")
    for row, pred, res in zip(result.rows, result.predicted, result.residuals):
        print(f"{row.servers:>3} {row.total_kwh:>10.6g} {pred:>10.6g} {100 * res:>8.2f}%")
    print(f"max |residual| {100 * result.max_abs_residual:.2f}%; wrote {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.random_states < 0:
        raise UsageError("--random-states must be >= 0")
    if not 0 < args.grid_step <= 0.25:
        raise UsageError("--grid-step must be in (0, 0.25]")
    if not 1 <= args.max_servers <= MAX_SERVERS:
        raise UsageError(f"--max-servers must be in 1..{MAX_SERVERS}")
    t0 = time.perf_counter()
    res = verify_random_states(args.random_states, args.seed, args.grid_step, args.max_servers)
    ok = res.passed(args.tolerance)
    if args.out:
        write_json(args.out, {**res.to_dict(), "tolerance": args.tolerance, "passed": ok})
    print(f"{res.states} states (seed {res.seed}, step {res.grid_step}): "
          f"max relative gap {res.max_gap:.3e}, min {res.min_gap:.3e} "
          f"in {time.perf_counter() - t0:.1f} s -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_GAP


def cmd_validate(args) -> int:
    s = load_scenario(args.scenario)
    assert not validate_scenario(s)
    print(f"{args.scenario}: valid ({len(s.regions)} regions, {len(s.servers)} servers)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="carbonsim", description="Carbon-aware federated edge simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario and write report.json / ledger.csv")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", choices=[x.value for x in ALL_POLICIES])
    p.add_argument("--out", default="out")
    p.add_argument("--dump-decisions", action="store_true", help="also write per-slot decisions.json")
    p.add_argument("--jobs", type=int, default=1, help="accepted for symmetry; a single run is sequential")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="all four policies for each server count")
    p.add_argument("--scenario", required=True)
    p.add_argument("--servers", type=_int_list, help="comma-separated server counts, e.g. 1,2,3")
    p.add_argument("--out", default="out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("calibrate", help="fit energy parameters to a measurement table")
    p.add_argument("--table", default=str(data_path("table1.csv")))
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.add_argument("--samples", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--fit-comm", action="store_true", help="fit the comm term too (split with static)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("verify", help="compare the LP with the brute-force oracle on random states")
    p.add_argument("--random-states", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-step", type=float, default=0.02)
    p.add_argument("--max-servers", type=int, default=MAX_SERVERS)
    p.add_argument("--tolerance", type=float, default=0.02)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioValidationError as exc:
        print(f"error: invalid scenario: {exc.violations[0]}", file=sys.stderr)
        for v in exc.violations[1:]:
            print(f"  also: {v}", file=sys.stderr)
        return EXIT_INVALID
    except (ScenarioError, CalibrationError, ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
