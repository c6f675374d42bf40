"""Time-slotted lifecycle simulation: preparation, training rounds, serving.

Every slot runs the same cycle: draw harvests, build the slot's demand, let
the policy allocate energy and work, book the result in the ledger, then push
leftover harvest into the batteries. One training round occupies one slot.
"""

from __future__ import annotations

import itertools
import json
import math
import zlib
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .deta import Policy, SlotState, sleep_mask, solve
from .energy import EnergyParams
from .harvest import BatteryState, Harvester, battery_step
from .ledger import EmissionLedger, LifecycleStage, StageReport
from .scenario import Region, Scenario

BACKBONE = "backbone"
COORDINATOR = "coordinator"
CONSERVATION_TOL = 1e-9  # kWh per run


class ConfigError(ValueError):
    pass


class ConservationError(AssertionError):
    pass


@dataclass
class SimState:
    slot: int
    round: int
    accuracy: float
    batteries: list[BatteryState]
    stage: LifecycleStage


@dataclass
class _Audit:
    harvested: list[float] = field(default_factory=list)
    consumed_renewable: list[float] = field(default_factory=list)
    trading_loss: list[float] = field(default_factory=list)
    charge_loss: list[float] = field(default_factory=list)
    overflow: list[float] = field(default_factory=list)
    model_kwh: list[float] = field(default_factory=list)
    exogenous_gco2e: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class _IntensityLookup:
    """Grid intensity per (ledger key, slot); picklable so reports can cross processes."""

    servers: dict[str, Region]
    backbone: float
    coordinator: Region | None

    def __call__(self, server_id: str, slot: int) -> float:
        if server_id == BACKBONE:
            return self.backbone
        if server_id == COORDINATOR:
            return self.coordinator.intensity_at(slot) if self.coordinator else self.backbone
        try:
            return self.servers[server_id].intensity_at(slot)
        except KeyError:
            raise KeyError(f"unknown server {server_id!r}") from None


@dataclass
class RunReport:
    scenario: str
    policy: Policy
    seed: int
    placement: tuple[str, ...]
    rounds_used: int
    final_accuracy: float
    target_reached: bool
    ledger: EmissionLedger
    objective_trace: list[float]
    decisions: dict[str, float]
    audit: dict[str, float]
    slots: int
    sweep_point: dict[str, Any] = field(default_factory=dict)

    @property
    def total_kwh(self) -> float:
        return self.ledger.total_kwh()

    @property
    def total_gco2e(self) -> float:
        return self.ledger.total_gco2e()

    @property
    def stage_report(self) -> StageReport:
        return self.ledger.stage_report()

    @property
    def servers(self) -> int:
        return len(self.placement)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "policy": self.policy.value,
            "seed": self.seed,
            "servers": self.servers,
            "placement": list(self.placement),
            "rounds_used": self.rounds_used,
            "final_accuracy": self.final_accuracy,
            "target_not_reached": not self.target_reached,
            "slots": self.slots,
            "carbon_impact": {"total_kwh": self.total_kwh, "total_gco2e": self.total_gco2e},
            "stages": self.stage_report.to_dict(),
            "objective_trace_gco2e": self.objective_trace,
            "decisions": self.decisions,
            "audit": self.audit,
            "sweep_point": self.sweep_point,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def split_samples(total: int, n: int) -> list[int]:
    base, rem = divmod(total, n)
    out = [base] * n
    out[0] += rem
    return out


def run(scenario: Scenario, policy: Policy | str | None = None, *,
        decision_log: list | None = None, check: bool = True) -> RunReport:
    """Simulate one full lifecycle under ``policy`` (default: the scenario's)."""
    policy = Policy(policy) if policy is not None else scenario.policy
    sc = scenario
    w = sc.workload
    n = len(sc.servers)
    ids = tuple(s.id for s in sc.servers)
    placement = sc.placement()
    regions = {r.id: r for r in sc.regions}
    backbone_ci = sc.effective_backbone_intensity
    coord_region = sc.coordinator.region_id

    intensity = _IntensityLookup(
        {sid: regions[placement[i]] for i, sid in enumerate(ids)},
        backbone_ci,
        regions[coord_region] if coord_region else None,
    )
    ledger = EmissionLedger(intensity)
    params = [EnergyParams.for_server(s, sc.slot_duration, w.model_bytes) for s in sc.servers]
    static = np.array([p.static_energy_per_slot for p in params])
    comm = np.array([p.comm_energy_per_model_exchange for p in params])
    k = np.array([s.compute_energy_per_unit for s in sc.servers])
    samples = split_samples(w.total_samples, n)
    harvesters = [Harvester(s.harvester, sc.seed, i, s.id) for i, s in enumerate(sc.servers)]
    sim = SimState(
        slot=0, round=0, accuracy=0.0,
        batteries=[BatteryState(s.battery_level, s.battery_capacity, s.charge_efficiency) for s in sc.servers],
        stage=LifecycleStage.PREPARATION,
    )
    initial_battery = math.fsum(b.level for b in sim.batteries)
    audit = _Audit()
    trace: list[float] = []
    summary = {"energy_transferred_kwh": 0.0, "energy_delivered_kwh": 0.0, "trading_loss_kwh": 0.0,
               "tasks_offloaded_units": 0.0, "backbone_kwh": 0.0, "grid_kwh": 0.0, "sleeping_server_slots": 0}

    def do_slot(fixed: np.ndarray, units: np.ndarray, exogenous: np.ndarray | None = None):
        slot, stage = sim.slot, sim.stage
        harvest = np.array([h.at(slot) for h in harvesters])
        state = SlotState(
            harvest=harvest,
            battery=np.array([b.level for b in sim.batteries]),
            units=units,
            fixed_demand=fixed,
            compute_energy_per_unit=k,
            intensity=np.array([intensity(sid, slot) for sid in ids]),
            alpha_energy=sc.alpha_energy,
            alpha_task=sc.alpha_task,
            trading_loss=sc.trading_loss,
            backbone_kwh_per_byte=sc.backbone_energy_per_byte,
            backbone_intensity=backbone_ci,
            bytes_per_work_unit=w.bytes_per_work_unit,
            server_ids=ids,
        )
        decision = solve(state, policy)
        if stage is LifecycleStage.DEVELOPMENT:
            asleep = sleep_mask(decision, state)
            summary["sleeping_server_slots"] += len(asleep)
            if asleep and sc.deep_sleep:
                mask = np.array([sid in asleep for sid in ids])
                state = state.replace(fixed_demand=np.where(mask, fixed - static, fixed))
                decision = solve(state, policy)

        for i, sid in enumerate(ids):
            consumed = max(decision.demand[i] - decision.grid_draw[i], 0.0)
            from_battery = min(decision.battery_discharge[i], consumed)
            ledger.record(sid, stage, slot, grid=float(decision.grid_draw[i]),
                          renewable=consumed - from_battery, battery_from_renewable=from_battery)
            audit.consumed_renewable.append(consumed)
        backbone_kwh = decision.total_offloaded * state.backbone_kwh_per_unit
        if backbone_kwh > 0:
            ledger.record(BACKBONE, stage, slot, grid=backbone_kwh)
        if exogenous is not None:
            for i, sid in enumerate(ids):
                if exogenous[i] > 0:
                    ledger.record(sid, stage, slot, grid=float(exogenous[i]))
                    audit.exogenous_gco2e.append(float(exogenous[i]) * intensity(sid, slot))
            audit.model_kwh.append(math.fsum(exogenous))

        charged = np.zeros(n)
        for i in range(n):
            spill = harvest[i] - decision.harvest_used[i]
            step = battery_step(sim.batteries[i], max(spill, 0.0), float(decision.battery_discharge[i]))
            sim.batteries[i] = step.state
            charged[i] = step.accepted
            audit.charge_loss.append(step.charge_loss)
            audit.overflow.append(step.overflow)
        decision.battery_charge = charged

        executed = state.units - decision.offloaded + decision.received
        audit.model_kwh.append(math.fsum(state.fixed_demand) + math.fsum(k * executed) + backbone_kwh)
        audit.harvested.append(math.fsum(harvest))
        moved = decision.total_transferred
        audit.trading_loss.append(sc.trading_loss * moved)
        summary["energy_transferred_kwh"] += moved
        summary["energy_delivered_kwh"] += (1 - sc.trading_loss) * moved
        summary["trading_loss_kwh"] += sc.trading_loss * moved
        summary["tasks_offloaded_units"] += decision.total_offloaded
        summary["backbone_kwh"] += backbone_kwh
        summary["grid_kwh"] += float(decision.grid_draw.sum())
        trace.append(decision.objective)
        if decision_log is not None:
            decision_log.append({"slot": slot, "stage": stage.value, "server_ids": list(ids), **decision.to_dict()})
        sim.slot += 1

    zeros = np.zeros(n)
    # preparation: users upload their data through the RAN to the edge servers
    sim.stage = LifecycleStage.PREPARATION
    recv = np.array([s * w.receive_energy_per_sample for s in samples])
    upload = np.array([s * w.upload_energy_per_sample for s in samples])
    do_slot(static + recv, zeros, exogenous=upload)

    sim.stage = LifecycleStage.DEVELOPMENT
    units = np.array([w.work_units(s) for s in samples])
    reached = False
    while True:
        sim.round += 1
        do_slot(static + comm, units)
        if sc.coordinator.energy_per_round > 0:
            ledger.record(COORDINATOR, sim.stage, sim.slot - 1, grid=sc.coordinator.energy_per_round)
            audit.model_kwh.append(sc.coordinator.energy_per_round)
            audit.exogenous_gco2e.append(sc.coordinator.energy_per_round * intensity(COORDINATOR, sim.slot - 1))
        sim.accuracy = w.accuracy_at(sim.round)
        if sim.accuracy >= w.target_accuracy:
            reached = True
            break
        if sim.round >= sc.max_rounds:
            break

    if w.inferences > 0:
        sim.stage = LifecycleStage.APPLICATION
        serve = w.inferences * w.energy_per_inference / (n * w.serving_slots)
        download = np.array([p.comm_energy_per_model_exchange / 2.0 for p in params])
        for j in range(w.serving_slots):
            extra = download if j == 0 else zeros
            do_slot(static + serve + extra, zeros)

    final_battery = math.fsum(b.level for b in sim.batteries)
    harvested = math.fsum(audit.harvested)
    consumed = math.fsum(audit.consumed_renewable)
    loss = math.fsum(audit.trading_loss)
    charge_loss = math.fsum(audit.charge_loss)
    overflow = math.fsum(audit.overflow)
    battery_delta = final_battery - initial_battery
    renewable_residual = harvested - (consumed + loss + battery_delta + charge_loss + overflow)
    model_kwh = math.fsum(audit.model_kwh)
    ledger_residual = model_kwh - ledger.total_kwh()
    emission_residual = ledger.total_gco2e() - (math.fsum(trace) + math.fsum(audit.exogenous_gco2e))
    audit_out = {
        "harvested_kwh": harvested,
        "renewable_consumed_kwh": consumed,
        "trading_loss_kwh": loss,
        "battery_delta_kwh": battery_delta,
        "charge_loss_kwh": charge_loss,
        "overflow_kwh": overflow,
        "renewable_residual_kwh": renewable_residual,
        "model_energy_kwh": model_kwh,
        "ledger_residual_kwh": ledger_residual,
        "emission_residual_gco2e": emission_residual,
    }
    if check and (abs(renewable_residual) > CONSERVATION_TOL or abs(ledger_residual) > CONSERVATION_TOL):
        raise ConservationError(f"energy conservation audit failed: {audit_out}")
    return RunReport(
        scenario=sc.name,
        policy=policy,
        seed=sc.seed,
        placement=placement,
        rounds_used=sim.round,
        final_accuracy=sim.accuracy,
        target_reached=reached,
        ledger=ledger,
        objective_trace=trace,
        decisions=summary,
        audit=audit_out,
        slots=sim.slot,
    )


# ---------------------------------------------------------------------------
# sweeps


def _set_target(s: Scenario, v) -> Scenario:
    return replace(s, workload=replace(s.workload, target_accuracy=float(v)))


SWEEPABLE = {
    "policy": lambda s, v: replace(s, policy=Policy(v)),
    "server_count": lambda s, v: s.with_server_count(int(v)),
    "seed": lambda s, v: replace(s, seed=int(v)),
    "target_accuracy": _set_target,
    "alpha_energy": lambda s, v: replace(s, alpha_energy=float(v)),
    "alpha_task": lambda s, v: replace(s, alpha_task=float(v)),
    "trading_loss": lambda s, v: replace(s, trading_loss=float(v)),
    "max_rounds": lambda s, v: replace(s, max_rounds=int(v)),
    "backbone_energy_per_byte": lambda s, v: replace(s, backbone_energy_per_byte=float(v)),
    "deep_sleep": lambda s, v: replace(s, deep_sleep=bool(v)),
}


def derive_seed(base: int, point: dict[str, Any]) -> int:
    """Deterministic per-combination seed; the policy does not enter it."""
    key = json.dumps({k: v for k, v in point.items() if k != "policy"}, sort_keys=True, default=str)
    ss = np.random.SeedSequence([base & 0xFFFFFFFF, zlib.crc32(key.encode())])
    return int(ss.generate_state(1)[0])


def sweep_points(vary: dict[str, Sequence]) -> list[dict[str, Any]]:
    for name in vary:
        if name not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {name!r}; choose from {sorted(SWEEPABLE)}")
    names = list(vary)
    return [dict(zip(names, combo)) for combo in itertools.product(*(vary[k] for k in names))]


def apply_point(scenario: Scenario, point: dict[str, Any], derive_seeds: bool) -> Scenario:
    s = scenario
    for name, value in point.items():
        s = SWEEPABLE[name](s, value)
    if derive_seeds and "seed" not in point:
        s = replace(s, seed=derive_seed(scenario.seed, point))
    return s


def _run_point(args) -> RunReport:
    scenario, point, derive_seeds = args
    report = run(apply_point(scenario, point, derive_seeds))
    report.sweep_point = dict(point)
    return report


def sweep(scenario: Scenario, vary: dict[str, Sequence], *, derive_seeds: bool = True, jobs: int = 1) -> list[RunReport]:
    """One report per combination of the varied fields, in product order."""
    points = sweep_points(vary)
    tasks = [(scenario, p, derive_seeds) for p in points]
    if jobs <= 1:
        return [_run_point(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_point, tasks))
