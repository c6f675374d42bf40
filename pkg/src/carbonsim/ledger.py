"""Scope-2 emission accounting keyed by (server, lifecycle stage, slot)."""

from __future__ import annotations

import enum
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass


class LifecycleStage(str, enum.Enum):
    PREPARATION = "Preparation"
    DEVELOPMENT = "Development"
    APPLICATION = "Application"
    RECYCLING = "Recycling"  # kept for completeness; never simulated


REPORTED_STAGES = (LifecycleStage.PREPARATION, LifecycleStage.DEVELOPMENT, LifecycleStage.APPLICATION)


class ContractViolation(ValueError):
    pass


def emissions(energy: float, intensity: float) -> float:
    """gCO2e from ``energy`` kWh of grid electricity at ``intensity`` g/kWh."""
    if energy < 0 or intensity < 0:
        raise ContractViolation(f"energy and intensity must be >= 0 (got {energy}, {intensity})")
    return energy * intensity


@dataclass
class LedgerEntry:
    kwh: float = 0.0
    grid_kwh: float = 0.0
    renewable_kwh: float = 0.0
    battery_kwh: float = 0.0
    gco2e: float = 0.0


class EmissionLedger:
    """Accumulates energy and emissions per (server, stage, slot).

    ``intensity`` maps ``(server_id, slot)`` to the grid intensity seen by that
    server; it raises ``KeyError`` for servers it does not know.
    """

    def __init__(self, intensity: Callable[[str, int], float]):
        self._intensity = intensity
        self.entries: dict[tuple[str, LifecycleStage, int], LedgerEntry] = {}

    @classmethod
    def from_regions(cls, server_region: dict[str, str], region_intensity: dict[str, Callable[[int], float]]):
        def lookup(server_id: str, slot: int) -> float:
            if server_id not in server_region:
                raise KeyError(f"unknown server {server_id!r}")
            region = server_region[server_id]
            if region not in region_intensity:
                raise KeyError(f"server {server_id!r} maps to unknown region {region!r}")
            return region_intensity[region](slot)

        return cls(lookup)

    def record(self, server_id: str, stage: LifecycleStage, slot: int, *, grid: float = 0.0,
               renewable: float = 0.0, battery_from_renewable: float = 0.0) -> "EmissionLedger":
        if min(grid, renewable, battery_from_renewable) < 0:
            raise ContractViolation(f"negative energy recorded for {server_id!r} at slot {slot}")
        intensity = self._intensity(server_id, slot)
        entry = self.entries.setdefault((server_id, LifecycleStage(stage), slot), LedgerEntry())
        entry.grid_kwh += grid
        entry.renewable_kwh += renewable
        entry.battery_kwh += battery_from_renewable
        entry.kwh += grid + renewable + battery_from_renewable
        entry.gco2e += emissions(grid, intensity)
        return self

    def __len__(self) -> int:
        return len(self.entries)

    def total_kwh(self, keys: Iterable | None = None) -> float:
        return math.fsum(e.kwh for e in self._select(keys))

    def total_gco2e(self, keys: Iterable | None = None) -> float:
        return math.fsum(e.gco2e for e in self._select(keys))

    def _select(self, keys):
        if keys is None:
            return self.entries.values()
        return (self.entries[k] for k in keys)

    def rows(self) -> list[tuple[str, str, int, float, float]]:
        """``(server, stage, slot, kwh, gco2e)`` in slot-then-insertion order."""
        items = sorted(enumerate(self.entries.items()), key=lambda t: (t[1][0][2], t[0]))
        return [(k[0], k[1].value, k[2], e.kwh, e.gco2e) for _, (k, e) in items]

    def stage_report(self) -> "StageReport":
        g = {s: [] for s in LifecycleStage}
        k = {s: [] for s in LifecycleStage}
        for (_, stage, _), e in self.entries.items():
            k[stage].append(e.kwh)
            g[stage].append(e.gco2e)
        kwh = {s: math.fsum(k[s]) for s in LifecycleStage}
        gco2e = {s: math.fsum(g[s]) for s in LifecycleStage}
        total = math.fsum(gco2e[s] for s in REPORTED_STAGES)
        fractions = {s: (gco2e[s] / total if total > 0 else 0.0) for s in LifecycleStage}
        fractions[LifecycleStage.RECYCLING] = 0.0
        return StageReport(kwh, gco2e, fractions)


@dataclass(frozen=True)
class StageReport:
    kwh: dict[LifecycleStage, float]
    gco2e: dict[LifecycleStage, float]
    fraction: dict[LifecycleStage, float]  # share of total emissions, reported stages only

    def to_dict(self) -> dict:
        return {
            s.value: {"kwh": self.kwh[s], "gco2e": self.gco2e[s], "fraction": self.fraction[s]}
            for s in LifecycleStage
        }

    def table(self) -> str:
        lines = [f"{'stage':<12} {'kWh':>14} {'gCO2e':>14} {'share':>8}"]
        for s in REPORTED_STAGES:
            lines.append(f"{s.value:<12} {self.kwh[s]:>14.6g} {self.gco2e[s]:>14.6g} {100 * self.fraction[s]:>7.2f}%")
        return "\n".join(lines)
