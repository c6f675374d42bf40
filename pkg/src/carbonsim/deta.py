"""Per-slot energy trading / task allocation policies as exact linear programs.

Decision variables for ``n`` servers (all kWh unless noted):

* ``e[i, j]``  renewable energy sent from i to j; j receives ``(1 - loss) * e[i, j]``
* ``x[i, j]``  work-units offloaded from i to j (executed at j's compute cost)
* ``g[i]``     grid draw, the only emitting source
* ``r[i]``     local renewable taken onto i's bus (harvest first, then battery)

Per-server balance::

    fixed_i + k_i * (u_i - sum_j x[i, j] + sum_j x[j, i])
        = g_i + r_i + (1 - loss) * sum_j e[j, i] - sum_j e[i, j]

with ``0 <= r_i <= harvest_i + battery_i``, exports drawn only from local
renewable (``sum_j e[i, j] <= r_i``) and the two caps::

    sum_j e[i, j] <= alpha_energy * (harvest_i + battery_i)
    sum_j x[i, j] <= alpha_task * u_i

The objective is grid emissions plus backbone transport emissions of offloaded
work. The LP fixes the flows; grid draw and renewable use are then recomputed
in closed form, which is optimal for fixed flows and makes the per-server
balance hold to rounding error.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

LP_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
    "presolve": True,
}
# slack allowed on earlier objectives when refining ties lexicographically
TIE_RTOL = 1e-10
TIE_ATOL = 1e-13


class Policy(str, enum.Enum):
    BASELINE = "Baseline"
    DET = "DET"
    DAT = "DAT"
    DETA = "DETA"

    @property
    def trades_energy(self) -> bool:
        return self in (Policy.DET, Policy.DETA)

    @property
    def offloads_tasks(self) -> bool:
        return self in (Policy.DAT, Policy.DETA)


ALL_POLICIES = (Policy.BASELINE, Policy.DET, Policy.DAT, Policy.DETA)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SlotState:
    """Everything the solver sees for one slot (complete information)."""

    harvest: np.ndarray
    battery: np.ndarray
    units: np.ndarray  # local work-units demanded this slot
    fixed_demand: np.ndarray  # kWh not tied to work-units (static, comm, ...)
    compute_energy_per_unit: np.ndarray
    intensity: np.ndarray  # gCO2e/kWh at each server's grid connection
    alpha_energy: float = 0.5
    alpha_task: float = 0.5
    trading_loss: float = 0.05
    backbone_kwh_per_byte: float = 0.0
    backbone_intensity: float = 0.0
    bytes_per_work_unit: float = 0.0
    server_ids: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.harvest)
        for name in ("harvest", "battery", "units", "fixed_demand", "compute_energy_per_unit", "intensity"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite and >= 0")
            object.__setattr__(self, name, arr)
        if not (0 <= self.alpha_energy <= 1 and 0 <= self.alpha_task <= 1):
            raise ValueError("caps must lie in [0, 1]")
        if not 0 <= self.trading_loss < 1:
            raise ValueError("trading_loss must lie in [0, 1)")
        if min(self.backbone_kwh_per_byte, self.backbone_intensity, self.bytes_per_work_unit) < 0:
            raise ValueError("backbone parameters must be >= 0")
        if not self.server_ids:
            object.__setattr__(self, "server_ids", tuple(f"s{i}" for i in range(n)))
        elif len(self.server_ids) != n:
            raise ValueError("server_ids length mismatch")

    @property
    def n(self) -> int:
        return len(self.harvest)

    @property
    def renewable_available(self) -> np.ndarray:
        return self.harvest + self.battery

    @property
    def base_demand(self) -> np.ndarray:
        return self.fixed_demand + self.compute_energy_per_unit * self.units

    @property
    def offload_cost_per_unit(self) -> float:
        """gCO2e of backbone transport per offloaded work-unit."""
        return self.bytes_per_work_unit * self.backbone_kwh_per_byte * self.backbone_intensity

    @property
    def backbone_kwh_per_unit(self) -> float:
        return self.bytes_per_work_unit * self.backbone_kwh_per_byte

    def replace(self, **changes) -> "SlotState":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return SlotState(**values)


@dataclass
class AllocationDecision:
    policy: Policy
    energy_transfer: np.ndarray
    task_offload: np.ndarray
    grid_draw: np.ndarray
    harvest_used: np.ndarray
    battery_discharge: np.ndarray
    demand: np.ndarray  # post-offload server demand (kWh)
    objective: float
    battery_charge: np.ndarray = field(default=None)  # filled in by the simulator

    def __post_init__(self):
        if self.battery_charge is None:
            self.battery_charge = np.zeros_like(self.grid_draw)

    @property
    def n(self) -> int:
        return len(self.grid_draw)

    @property
    def exported(self) -> np.ndarray:
        return self.energy_transfer.sum(axis=1)

    @property
    def imported(self) -> np.ndarray:
        return self.energy_transfer.sum(axis=0)

    @property
    def offloaded(self) -> np.ndarray:
        return self.task_offload.sum(axis=1)

    @property
    def received(self) -> np.ndarray:
        return self.task_offload.sum(axis=0)

    @property
    def total_transferred(self) -> float:
        return float(self.energy_transfer.sum())

    @property
    def total_offloaded(self) -> float:
        return float(self.task_offload.sum())

    @property
    def renewable_consumed(self) -> np.ndarray:
        return self.demand - self.grid_draw

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.value,
            "energy_transfer": self.energy_transfer.tolist(),
            "task_offload": self.task_offload.tolist(),
            "grid_draw": self.grid_draw.tolist(),
            "harvest_used": self.harvest_used.tolist(),
            "battery_discharge": self.battery_discharge.tolist(),
            "battery_charge": self.battery_charge.tolist(),
            "objective": self.objective,
        }


def settle(state: SlotState, e: np.ndarray, x: np.ndarray, policy: Policy) -> AllocationDecision:
    """Complete a decision from fixed flows: cheapest grid draw and renewable use."""
    loss = state.trading_loss
    k = state.compute_energy_per_unit
    demand = state.fixed_demand + k * (state.units - x.sum(axis=1) + x.sum(axis=0))
    net = demand + e.sum(axis=1) - (1.0 - loss) * e.sum(axis=0)
    renewable = np.minimum(np.maximum(net, 0.0), state.renewable_available)
    grid = np.maximum(net - renewable, 0.0)
    # a draw at rounding level of the terms that produced it is exactly zero
    scale = demand + e.sum(axis=1) + e.sum(axis=0) + state.renewable_available
    grid[grid <= 8 * np.finfo(float).eps * scale] = 0.0
    harvest_used = np.minimum(renewable, state.harvest)
    discharge = np.minimum(renewable - harvest_used, state.battery)
    objective = math.fsum(state.intensity * grid) + state.offload_cost_per_unit * float(x.sum())
    return AllocationDecision(policy, e, x, grid, harvest_used, discharge, demand, objective)


def constraint_violation(state: SlotState, d: AllocationDecision) -> float:
    """Largest violation (kWh or work-units) of any solver constraint."""
    n = state.n
    avail = state.renewable_available
    r = d.harvest_used + d.battery_discharge
    viol = [
        -min(d.energy_transfer.min(initial=0.0), d.task_offload.min(initial=0.0), d.grid_draw.min(), r.min()),
        float(np.max(np.abs(np.diag(d.energy_transfer)), initial=0.0)),
        float(np.max(np.abs(np.diag(d.task_offload)), initial=0.0)),
        float(np.max(d.exported - state.alpha_energy * avail, initial=0.0)),
        float(np.max(d.offloaded - state.alpha_task * state.units, initial=0.0)),
        float(np.max(d.exported - r, initial=0.0)),
        float(np.max(r - avail, initial=0.0)),
    ]
    balance = d.grid_draw + r + (1 - state.trading_loss) * d.imported - d.exported - d.demand
    viol.append(float(np.max(np.abs(balance), initial=0.0)) if n else 0.0)
    return max(viol)


class _Program:
    """Scaled LP for one slot. Variables: g, r, e (off-diagonal), f (offload fractions)."""

    def __init__(self, state: SlotState, policy: Policy):
        self.state = state
        self.policy = policy
        n = state.n
        self.pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        p = len(self.pairs)
        avail = state.renewable_available
        self.escale = max(float(np.max(state.base_demand, initial=0.0)), float(np.max(avail, initial=0.0))) or 1.0
        self.n_e = p if policy.trades_energy and state.alpha_energy > 0 else 0
        self.n_f = p if policy.offloads_tasks and state.alpha_task > 0 else 0
        self.og, self.or_, self.oe, self.of = 0, n, 2 * n, 2 * n + self.n_e
        self.nvar = 2 * n + self.n_e + self.n_f
        self._build()

    def _build(self):
        s, n, sc = self.state, self.state.n, self.escale
        loss = s.trading_loss
        k_u = s.compute_energy_per_unit * s.units / sc  # scaled energy of all local work at i
        A_eq = np.zeros((n, self.nvar))
        b_eq = (s.fixed_demand + s.compute_energy_per_unit * s.units) / sc
        A_ub, b_ub = [], []
        bounds = [(0, None)] * n + [(0, a / sc) for a in s.renewable_available]
        for i in range(n):
            A_eq[i, self.og + i] = 1.0
            A_eq[i, self.or_ + i] = 1.0
        if self.n_e:
            for c, (i, j) in enumerate(self.pairs):
                A_eq[i, self.oe + c] -= 1.0
                A_eq[j, self.oe + c] += 1.0 - loss
            for i in range(n):
                row = np.zeros(self.nvar)
                for c, (a, _) in enumerate(self.pairs):
                    if a == i:
                        row[self.oe + c] = 1.0
                A_ub.append(row)
                b_ub.append(s.alpha_energy * s.renewable_available[i] / sc)
                row = row.copy()
                row[self.or_ + i] = -1.0
                A_ub.append(row)
                b_ub.append(0.0)
            bounds += [(0, None)] * self.n_e
        if self.n_f:
            for c, (i, j) in enumerate(self.pairs):
                # offloading fraction f of i's units: i saves k_i u_i f, j spends k_j u_i f
                A_eq[i, self.of + c] += k_u[i]
                A_eq[j, self.of + c] -= s.compute_energy_per_unit[j] * s.units[i] / sc
            for i in range(n):
                row = np.zeros(self.nvar)
                for c, (a, _) in enumerate(self.pairs):
                    if a == i:
                        row[self.of + c] = 1.0
                A_ub.append(row)
                b_ub.append(s.alpha_task if s.units[i] > 0 else 0.0)
            bounds += [(0, 1)] * self.n_f
        self.A_eq, self.b_eq = A_eq, b_eq
        self.A_ub = np.array(A_ub) if A_ub else None
        self.b_ub = np.array(b_ub) if b_ub else None
        self.bounds = bounds
        cscale = max(float(np.max(s.intensity, initial=0.0)), s.offload_cost_per_unit) or 1.0
        self.cscale = cscale
        c = np.zeros(self.nvar)
        c[self.og : self.og + n] = s.intensity / cscale
        if self.n_f:
            units_of_sender = np.array([s.units[i] for i, _ in self.pairs])
            # cost per unit of f in scaled currency: (g per unit) * units / (cscale * escale)
            c[self.of :] = s.offload_cost_per_unit * units_of_sender / (cscale * sc)
        self.c = c

    def solve(self, c: np.ndarray, extra_ub: list[tuple[np.ndarray, float]] = ()) -> np.ndarray:
        A_ub, b_ub = self.A_ub, self.b_ub
        if extra_ub:
            rows = np.array([r for r, _ in extra_ub])
            vals = np.array([v for _, v in extra_ub])
            A_ub = rows if A_ub is None else np.vstack([A_ub, rows])
            b_ub = vals if b_ub is None else np.concatenate([b_ub, vals])
        res = linprog(
            c, A_ub=A_ub, b_ub=b_ub, A_eq=self.A_eq, b_eq=self.b_eq,
            bounds=self.bounds, method="highs-ds", options=LP_OPTIONS,
        )
        if res.status != 0:
            raise SolverError(
                f"{self.policy.value} LP failed ({res.message}); "
                f"A_eq={self.A_eq.tolist()} b_eq={self.b_eq.tolist()} "
                f"A_ub={None if A_ub is None else A_ub.tolist()} b_ub={None if b_ub is None else b_ub.tolist()}"
            )
        return res.x

    def flows(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s, n = self.state, self.state.n
        e = np.zeros((n, n))
        x = np.zeros((n, n))
        if self.n_e:
            for c, (i, j) in enumerate(self.pairs):
                e[i, j] = z[self.oe + c] * self.escale
        if self.n_f:
            for c, (i, j) in enumerate(self.pairs):
                x[i, j] = z[self.of + c] * s.units[i]
        return _clean_flows(s, e, x)

    def lexicographic(self) -> AllocationDecision:
        """Minimise emissions, then total transferred energy, then total offload.

        A refinement step is kept only if its settled emissions do not exceed
        those of the first-stage optimum.
        """
        z = self.solve(self.c)
        best = settle(self.state, *self.flows(z), self.policy)
        if not (best.energy_transfer.any() or best.task_offload.any()):
            return best
        ceiling = best.objective + 4 * np.spacing(best.objective)
        steps = []
        if self.n_e:
            w = np.zeros(self.nvar)
            w[self.oe : self.oe + self.n_e] = 1.0
            steps.append(w)
        if self.n_f:
            w = np.zeros(self.nvar)
            w[self.of :] = [self.state.units[i] for i, _ in self.pairs]
            w /= max(w.max(), 1.0)
            steps.append(w)
        fixed = [(self.c, float(self.c @ z))]
        for w in steps:
            extra = [(row, val + TIE_RTOL * abs(val) + TIE_ATOL) for row, val in fixed]
            try:
                z2 = self.solve(w, extra)
            except SolverError:
                break  # tightened program tripped on tolerances; keep what we have
            cand = settle(self.state, *self.flows(z2), self.policy)
            if cand.objective > ceiling:
                break
            z, best = z2, cand
            fixed.append((w, float(w @ z)))
        return best


def _clean_flows(state: SlotState, e: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero solver noise and pull flows back inside their caps exactly."""
    escale = max(float(np.max(state.base_demand, initial=0.0)), float(np.max(state.renewable_available, initial=0.0)), 1e-300)
    e = np.where(e > 1e-12 * escale, e, 0.0)
    np.fill_diagonal(e, 0.0)
    ecap = state.alpha_energy * state.renewable_available
    out = e.sum(axis=1)
    over = out > ecap
    if over.any():
        e[over] *= (ecap[over] / out[over])[:, None]
    x = np.where(x > 1e-12 * np.maximum(state.units, 1e-300)[:, None], x, 0.0)
    np.fill_diagonal(x, 0.0)
    xcap = state.alpha_task * state.units
    out = x.sum(axis=1)
    over = out > xcap
    if over.any():
        x[over] *= (xcap[over] / out[over])[:, None]
    return e, x


def solve(state: SlotState, policy: Policy | str = Policy.DETA) -> AllocationDecision:
    """Exact minimum-emission allocation for one slot under ``policy``."""
    policy = Policy(policy)
    n = state.n
    zero = np.zeros((n, n))
    if n < 2 or policy is Policy.BASELINE:
        return settle(state, zero, zero.copy(), policy)
    prog = _Program(state, policy)
    if prog.n_e == 0 and prog.n_f == 0:
        return settle(state, zero, zero.copy(), policy)
    decision = prog.lexicographic()
    viol = constraint_violation(state, decision)
    if viol > 1e-9 * max(prog.escale, 1.0):
        raise SolverError(f"{policy.value} solution violates constraints by {viol:.3e}")
    return decision


def sleep_mask(decision: AllocationDecision, state: SlotState) -> set[str]:
    """Servers left with no work-units to execute after offloading."""
    residual = state.units - decision.offloaded + decision.received
    tol = 1e-12 * max(float(np.max(state.units, initial=0.0)), 1.0)
    return {sid for sid, r in zip(state.server_ids, residual) if r <= tol}


def random_slot_state(rng: np.random.Generator, n: int, **overrides) -> SlotState:
    """Random slot with edge-server-scale magnitudes (demands ~1e-4..1e-2 kWh)."""
    units = rng.integers(0, 5000, size=n).astype(float)
    k = rng.uniform(2e-7, 2e-6, size=n)
    fixed = rng.uniform(1e-4, 2e-3, size=n)
    demand_scale = fixed + k * units
    harvest = demand_scale * rng.choice([0.0, 0.3, 1.0, 2.0], size=n) * rng.uniform(0, 1.5, size=n)
    battery = demand_scale * rng.uniform(0, 1.0, size=n) * (rng.random(n) < 0.5)
    intensity = rng.uniform(20, 900, size=n)
    kwargs = dict(
        harvest=harvest,
        battery=battery,
        units=units,
        fixed_demand=fixed,
        compute_energy_per_unit=k,
        intensity=intensity,
        alpha_energy=0.5,
        alpha_task=0.5,
        trading_loss=float(rng.uniform(0, 0.2)),
        backbone_kwh_per_byte=float(rng.uniform(0, 5e-11)),
        backbone_intensity=float(intensity.mean()),
        bytes_per_work_unit=float(rng.uniform(0, 2000)),
    )
    kwargs.update(overrides)
    return SlotState(**kwargs)
