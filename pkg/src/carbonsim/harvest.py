"""Renewable harvest processes and battery bookkeeping for edge servers."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import special


class HarvestProcess(str, enum.Enum):
    CONSTANT = "constant"
    TRUNCATED_NORMAL = "truncated-normal"
    TRACE = "trace"


class TraceExhausted(LookupError):
    pass


class BatteryInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class HarvestParams:
    """Per-slot renewable arrival model (kWh per slot)."""

    process: HarvestProcess = HarvestProcess.TRUNCATED_NORMAL
    mean: float = 0.0
    stddev: float = 0.0
    trace_path: str | None = None

    @classmethod
    def off(cls) -> "HarvestParams":
        return cls(HarvestProcess.CONSTANT, 0.0, 0.0)


def sample_truncated_normal(mean: float, stddev: float, rng: np.random.Generator) -> float:
    """Draw from N(mean, stddev^2) conditioned on being >= 0 (inverse CDF)."""
    if stddev == 0.0:
        return max(mean, 0.0)
    lo = special.ndtr(-mean / stddev)
    u = lo + (1.0 - lo) * rng.random()
    # u can round to 1.0 when the lower cut sits deep in the left tail
    u = min(u, np.nextafter(1.0, 0.0))
    return max(mean + stddev * float(special.ndtri(u)), 0.0)


def load_trace(path: str | Path) -> dict[str, dict[int, float]]:
    """Read a ``server_id,slot,kwh`` trace file into ``{server: {slot: kwh}}``."""
    traces: dict[str, dict[int, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            kwh = float(row["kwh"])
            if kwh < 0:
                raise ValueError(f"negative harvest in trace {path}: {row}")
            traces.setdefault(row["server_id"], {})[int(row["slot"])] = kwh
    return traces


def harvest_step(
    params: HarvestParams,
    rng: np.random.Generator | None = None,
    *,
    slot: int = 0,
    trace: dict[int, float] | None = None,
) -> float:
    """Return the renewable energy (kWh) harvested in one slot."""
    if params.process is HarvestProcess.CONSTANT:
        return max(params.mean, 0.0)
    if params.process is HarvestProcess.TRUNCATED_NORMAL:
        if rng is None:
            raise ValueError("truncated-normal harvest needs a random generator")
        return sample_truncated_normal(params.mean, params.stddev, rng)
    if trace is None or slot not in trace:
        raise TraceExhausted(f"harvest trace has no entry for slot {slot}")
    return trace[slot]


class Harvester:
    """Independent, replayable harvest stream for one server.

    Each slot draws from its own generator keyed on (seed, server index, slot),
    so the value at a slot does not depend on which other slots were sampled.
    """

    def __init__(
        self,
        params: HarvestParams,
        seed: int,
        server_index: int,
        server_id: str = "",
        base_dir: Path | None = None,
    ):
        self.params = params
        self.seed = seed
        self.server_index = server_index
        self.server_id = server_id
        self._trace: dict[int, float] | None = None
        if params.process is HarvestProcess.TRACE:
            if params.trace_path is None:
                raise ValueError(f"server {server_id!r}: trace process needs trace_path")
            path = Path(params.trace_path)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            self._trace = load_trace(path).get(server_id, {})

    def at(self, slot: int) -> float:
        rng = None
        if self.params.process is HarvestProcess.TRUNCATED_NORMAL:
            rng = np.random.default_rng([self.seed, self.server_index, slot])
        try:
            return harvest_step(self.params, rng, slot=slot, trace=self._trace)
        except TraceExhausted as exc:
            raise TraceExhausted(f"server {self.server_id!r}: {exc}") from None


@dataclass(frozen=True)
class BatteryState:
    level: float
    capacity: float
    charge_efficiency: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.charge_efficiency <= 1.0:
            raise ValueError(f"charge_efficiency must be in [0, 1], got {self.charge_efficiency}")
        if self.capacity < 0 or not 0.0 <= self.level <= self.capacity:
            raise ValueError(f"battery level {self.level} outside [0, {self.capacity}]")

    @property
    def room(self) -> float:
        return self.capacity - self.level


@dataclass(frozen=True)
class BatteryStep:
    state: BatteryState
    accepted: float  # charge energy actually taken in, before efficiency loss
    overflow: float  # offered charge that did not fit

    @property
    def charge_loss(self) -> float:
        return (1.0 - self.state.charge_efficiency) * self.accepted


def battery_step(state: BatteryState, charge: float, discharge: float) -> BatteryStep:
    """Discharge then charge one slot; energy that does not fit is overflow.

    Overflow is measured in offered (pre-efficiency) kWh.
    """
    if charge < 0 or discharge < 0:
        raise BatteryInfeasible(f"negative battery flow (charge={charge}, discharge={discharge})")
    if discharge > state.level * (1 + 1e-12) + 1e-15:
        raise BatteryInfeasible(f"discharge {discharge} exceeds battery level {state.level}")
    level = max(state.level - discharge, 0.0)
    eff = state.charge_efficiency
    room = state.capacity - level
    if eff == 0.0:
        accepted = 0.0
    else:
        accepted = min(charge, room / eff)
    level = min(level + eff * accepted, state.capacity)
    return BatteryStep(replace(state, level=level), accepted, charge - accepted)
