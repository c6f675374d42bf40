"""Comparison tables and artifact writers (CSV/JSON, written atomically)."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .deta import ALL_POLICIES, Policy
from .ledger import EmissionLedger
from .scenario import Scenario
from .simulator import BACKBONE, RunReport, sweep


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def ledger_csv(ledger: EmissionLedger) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["server", "stage", "slot", "kwh", "gco2e"])
    for server, stage, slot, kwh, g in ledger.rows():
        w.writerow([server, stage, slot, repr(kwh), repr(g)])
    return buf.getvalue()


def backbone_gco2e(ledger: EmissionLedger) -> float:
    return math.fsum(e.gco2e for (sid, _, _), e in ledger.entries.items() if sid == BACKBONE)


def reduction_pct(baseline: float, value: float) -> float:
    if baseline <= 0:
        return 0.0
    return 100.0 * (baseline - value) / baseline


@dataclass(frozen=True)
class ComparisonRow:
    server_count: int
    policy: Policy
    total_kwh: float
    total_gco2e: float
    reduction_pct: float
    gco2e_excl_backbone: float
    reduction_excl_backbone_pct: float
    rounds_used: int
    target_reached: bool


_BOOL = {"true": True, "false": False}


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]

    def get(self, server_count: int, policy: Policy | str) -> ComparisonRow:
        policy = Policy(policy)
        for r in self.rows:
            if r.server_count == server_count and r.policy is policy:
                return r
        raise KeyError((server_count, policy.value))

    @property
    def server_counts(self) -> list[int]:
        return sorted({r.server_count for r in self.rows})

    def reductions(self, policy: Policy | str, *, excl_backbone: bool = False) -> list[float]:
        rows = [self.get(n, policy) for n in self.server_counts]
        return [r.reduction_excl_backbone_pct if excl_backbone else r.reduction_pct for r in rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = [f.name for f in fields(ComparisonRow)]
        w.writerow(names)
        for r in self.rows:
            out = []
            for name in names:
                v = getattr(r, name)
                if isinstance(v, Policy):
                    out.append(v.value)
                elif isinstance(v, bool):
                    out.append("true" if v else "false")
                elif isinstance(v, float):
                    out.append(repr(v))
                else:
                    out.append(str(v))
            w.writerow(out)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ComparisonTable":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            rows.append(ComparisonRow(
                server_count=int(rec["server_count"]),
                policy=Policy(rec["policy"]),
                total_kwh=float(rec["total_kwh"]),
                total_gco2e=float(rec["total_gco2e"]),
                reduction_pct=float(rec["reduction_pct"]),
                gco2e_excl_backbone=float(rec["gco2e_excl_backbone"]),
                reduction_excl_backbone_pct=float(rec["reduction_excl_backbone_pct"]),
                rounds_used=int(rec["rounds_used"]),
                target_reached=_BOOL[rec["target_reached"]],
            ))
        return cls(rows)

    def to_dict(self) -> list[dict]:
        return [{**asdict(r), "policy": r.policy.value} for r in self.rows]

    def summary(self) -> str:
        lines = [f"{'N':>3} {'policy':<8} {'kWh':>12} {'gCO2e':>12} {'reduction':>10} {'excl. bb':>10}"]
        for r in self.rows:
            lines.append(f"{r.server_count:>3} {r.policy.value:<8} {r.total_kwh:>12.6g} {r.total_gco2e:>12.6g} "
                         f"{r.reduction_pct:>9.2f}% {r.reduction_excl_backbone_pct:>9.2f}%")
        return "\n".join(lines)


def build_comparison(reports: Iterable[RunReport]) -> ComparisonTable:
    """Rows ordered by server count, then policy; needs a Baseline run per N."""
    by_key = {(r.servers, r.policy): r for r in reports}
    baseline = {n: r for (n, p), r in by_key.items() if p is Policy.BASELINE}
    order = {p: i for i, p in enumerate(ALL_POLICIES)}
    rows = []
    for (n, p), r in sorted(by_key.items(), key=lambda t: (t[0][0], order[t[0][1]])):
        if n not in baseline:
            raise ValueError(f"no Baseline run for N={n}")
        b = baseline[n]
        b_excl = b.total_gco2e - backbone_gco2e(b.ledger)
        excl = r.total_gco2e - backbone_gco2e(r.ledger)
        rows.append(ComparisonRow(
            server_count=n,
            policy=p,
            total_kwh=r.total_kwh,
            total_gco2e=r.total_gco2e,
            reduction_pct=0.0 if p is Policy.BASELINE else reduction_pct(b.total_gco2e, r.total_gco2e),
            gco2e_excl_backbone=excl,
            reduction_excl_backbone_pct=0.0 if p is Policy.BASELINE else reduction_pct(b_excl, excl),
            rounds_used=r.rounds_used,
            target_reached=r.target_reached,
        ))
    return ComparisonTable(rows)


def compare(scenario: Scenario, server_counts: Sequence[int] | None = None, *, jobs: int = 1,
            derive_seeds: bool = True) -> ComparisonTable:
    """All four policies at every N; policies at the same N share a seed."""
    vary: dict = {}
    if server_counts is not None:
        vary["server_count"] = list(server_counts)
    vary["policy"] = list(ALL_POLICIES)
    if server_counts is None:
        derive_seeds = False
    return build_comparison(sweep(scenario, vary, derive_seeds=derive_seeds, jobs=jobs))
