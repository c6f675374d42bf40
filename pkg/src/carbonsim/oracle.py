"""Brute-force oracle for the per-slot allocation problem (n <= 3).

Two finite candidate sets are enumerated exhaustively and the cheapest
feasible candidate wins:

* the flow grid: every flow is a multiple of ``grid_step`` times its sender's
  cap;
* arrangement vertices: for each flow support, every point where as many of
  the following hyperplanes as there are free flows meet -- flow bounds, sender
  caps, "grid draw just reaches zero" and "imports exactly absorb demand" for
  each server.

Only supports in which no server both sends and receives the same resource
are considered; relays and two-way flows can always be replaced by direct
one-way flows at no extra cost, so this drops dominated points only. Emissions
are piecewise linear and convex in the flows, so the minimum over a support is
attained at one of its arrangement vertices. Nothing here calls an LP solver.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .deta import AllocationDecision, Policy, SlotState, constraint_violation, random_slot_state, settle, solve

MAX_SERVERS = 3


class OracleRefused(ValueError):
    pass


def _flow_patterns(n: int, levels: int) -> np.ndarray:
    """All role-disjoint integer flow matrices with per-sender level sums <= levels."""
    configs = [np.zeros((n, n), dtype=np.int64)]
    nodes = range(n)
    for s_size in range(1, n):
        for senders in itertools.combinations(nodes, s_size):
            rest = [v for v in nodes if v not in senders]
            for r_size in range(1, len(rest) + 1):
                for receivers in itertools.combinations(rest, r_size):
                    pairs = [(i, j) for i in senders for j in receivers]
                    for lv in itertools.product(range(1, levels + 1), repeat=len(pairs)):
                        m = np.zeros((n, n), dtype=np.int64)
                        for (i, j), v in zip(pairs, lv):
                            m[i, j] = v
                        if np.all(m.sum(axis=1) <= levels):
                            configs.append(m)
    return np.array(configs)


@njit(cache=True)
def _search(fixed, k, units, avail, intensity, loss, unit_cost,
            e_out, e_in, x_out, x_in, x_total):
    n = fixed.shape[0]
    best = np.inf
    best_t = -1
    best_c = -1
    demand = np.empty(n)
    for t in range(x_out.shape[0]):
        for j in range(n):
            demand[j] = fixed[j] + k[j] * (units[j] - x_out[t, j] + x_in[t, j])
        base = unit_cost * x_total[t]
        if base > best:
            continue
        for c in range(e_out.shape[0]):
            cost = base
            ok = True
            for j in range(n):
                imported = (1.0 - loss) * e_in[c, j]
                if imported > demand[j] * (1.0 + 1e-12):
                    ok = False
                    break
                net = demand[j] + e_out[c, j] - imported
                if net > avail[j]:
                    cost += intensity[j] * (net - avail[j])
            if ok and cost < best:
                best = cost
                best_t = t
                best_c = c
    return best, best_t, best_c


def solve_oracle(state: SlotState, grid_step: float = 0.02, policy: Policy | str = Policy.DETA) -> AllocationDecision:
    """Minimum-emission decision over the discretised flow grid."""
    policy = Policy(policy)
    n = state.n
    if n > MAX_SERVERS:
        raise OracleRefused(f"oracle handles at most {MAX_SERVERS} servers, got {n}")
    if not 0 < grid_step <= 0.25:
        raise ValueError(f"grid_step must lie in (0, 0.25], got {grid_step}")
    levels = int(math.floor(1.0 / grid_step + 1e-9))

    avail = state.renewable_available
    unit_e = grid_step * state.alpha_energy * avail
    unit_x = grid_step * state.alpha_task * state.units
    use_e = policy.trades_energy and state.alpha_energy > 0
    use_x = policy.offloads_tasks and state.alpha_task > 0
    e_idx = _flow_patterns(n, levels) if use_e and n > 1 else np.zeros((1, n, n), dtype=np.int64)
    x_idx = _flow_patterns(n, levels) if use_x and n > 1 else np.zeros((1, n, n), dtype=np.int64)
    e_flow = e_idx * unit_e[None, :, None]
    x_flow = x_idx * unit_x[None, :, None]

    best, t, c = _search(
        state.fixed_demand, state.compute_energy_per_unit, state.units, avail,
        state.intensity, float(state.trading_loss), float(state.offload_cost_per_unit),
        e_flow.sum(axis=2), e_flow.sum(axis=1), x_flow.sum(axis=2), x_flow.sum(axis=1),
        x_flow.sum(axis=(1, 2)),
    )
    if t < 0:
        raise RuntimeError("oracle found no feasible configuration")  # zero flows are always feasible
    decision = settle(state, e_flow[c].astype(float), x_flow[t].astype(float), policy)
    if n > 1 and (use_e or use_x):
        vertex = _best_vertex(state, use_e, use_x, policy)
        if vertex is not None and vertex.objective < decision.objective:
            decision = vertex
    return decision


def _supports(n: int) -> list[list[tuple[int, int]]]:
    """Role-disjoint flow supports: lists of active (sender, receiver) pairs."""
    out: list[list[tuple[int, int]]] = [[]]
    nodes = range(n)
    for s_size in range(1, n):
        for senders in itertools.combinations(nodes, s_size):
            rest = [v for v in nodes if v not in senders]
            for r_size in range(1, len(rest) + 1):
                for receivers in itertools.combinations(rest, r_size):
                    out.append([(i, j) for i in senders for j in receivers])
    return out


def _best_vertex(state: SlotState, use_e: bool, use_x: bool, policy: Policy) -> AllocationDecision | None:
    n = state.n
    loss = state.trading_loss
    k = state.compute_energy_per_unit
    avail = state.renewable_available
    base = state.base_demand
    scale = max(float(base.max()), float(avail.max()), 1e-300)
    tol = 1e-9 * scale
    e_supports = _supports(n) if use_e else [[]]
    x_supports = _supports(n) if use_x else [[]]
    best: AllocationDecision | None = None
    for es in e_supports:
        for xs in x_supports:
            d = len(es) + len(xs)
            if d == 0:
                continue
            # affine maps v -> per-server demand after offload, and net need
            dem_A = np.zeros((n, d))
            net_A = np.zeros((n, d))
            imp_A = np.zeros((n, d))
            for c, (i, j) in enumerate(es):
                net_A[i, c] += 1.0
                net_A[j, c] -= 1.0 - loss
                imp_A[j, c] += 1.0 - loss
            for c, (i, j) in enumerate(xs, start=len(es)):
                dem_A[i, c] -= k[i]
                dem_A[j, c] += k[j]
            net_A += dem_A
            rows, rhs = [], []
            for c in range(d):
                row = np.zeros(d)
                row[c] = 1.0
                rows.append(row)
                rhs.append(0.0)
            caps = []  # (row, cap) pairs, used as hyperplanes and as constraints
            for i in range(n):
                row = np.array([1.0 if c < len(es) and es[c][0] == i else 0.0 for c in range(d)])
                if row.any():
                    caps.append((row, state.alpha_energy * avail[i]))
                row = np.array([1.0 if c >= len(es) and xs[c - len(es)][0] == i else 0.0 for c in range(d)])
                if row.any():
                    caps.append((row, state.alpha_task * state.units[i]))
            for row, cap in caps:
                rows.append(row)
                rhs.append(cap)
            for j in range(n):
                rows.append(net_A[j])
                rhs.append(avail[j] - base[j])
                rows.append(imp_A[j] - dem_A[j])
                rhs.append(base[j])
            H = np.array(rows)
            h = np.array(rhs)
            combos = np.array(list(itertools.combinations(range(len(H)), d)))
            M = H[combos]
            b = h[combos]
            det = np.linalg.det(M)
            ok = np.abs(det) > 1e-12 * np.prod(np.abs(M).max(axis=2) + 1e-300, axis=1)
            if not ok.any():
                continue
            V = np.linalg.solve(M[ok], b[ok][..., None])[..., 0]
            feas = np.all(V >= -tol, axis=1)
            for row, cap in caps:
                feas &= V @ row <= cap + tol
            demand = base[None, :] + V @ dem_A.T
            feas &= np.all(V @ imp_A.T <= demand + tol, axis=1)
            if not feas.any():
                continue
            V = np.maximum(V[feas], 0.0)
            net = base[None, :] + V @ net_A.T
            cost = np.maximum(net - avail[None, :], 0.0) @ state.intensity
            if xs:
                cost = cost + state.offload_cost_per_unit * V[:, len(es):].sum(axis=1)
            v = V[int(np.argmin(cost))]
            e = np.zeros((n, n))
            x = np.zeros((n, n))
            for c, (i, j) in enumerate(es):
                e[i, j] = v[c]
            for c, (i, j) in enumerate(xs, start=len(es)):
                x[i, j] = v[c]
            e, x = _clip_to_caps(state, e, x)
            cand = settle(state, e, x, policy)
            if constraint_violation(state, cand) > tol:
                continue
            if best is None or cand.objective < best.objective:
                best = cand
    return best


def _clip_to_caps(state: SlotState, e: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    for flows, cap in ((e, state.alpha_energy * state.renewable_available), (x, state.alpha_task * state.units)):
        out = flows.sum(axis=1)
        over = out > cap
        if over.any():
            flows[over] *= (cap[over] / out[over])[:, None]
    return e, x


@dataclass(frozen=True)
class VerifyResult:
    states: int
    seed: int
    grid_step: float
    gaps: tuple[float, ...]  # (oracle - lp) / max(|lp|, |oracle|, 1e-9)
    server_counts: tuple[int, ...]

    @property
    def max_gap(self) -> float:
        return max(self.gaps, default=0.0)

    @property
    def min_gap(self) -> float:
        return min(self.gaps, default=0.0)

    def passed(self, tolerance: float = 0.02, beat_tol: float = 1e-9) -> bool:
        """Gap within ``tolerance`` and the LP never beaten beyond ``beat_tol``."""
        return self.max_gap <= tolerance and self.min_gap >= -beat_tol

    def to_dict(self) -> dict:
        return {
            "states": self.states,
            "seed": self.seed,
            "grid_step": self.grid_step,
            "max_relative_gap": self.max_gap,
            "min_relative_gap": self.min_gap,
            "gaps": list(self.gaps),
            "server_counts": list(self.server_counts),
        }


def relative_gap(lp: float, oracle: float) -> float:
    return (oracle - lp) / max(abs(lp), abs(oracle), 1e-9)


def verify_random_states(k: int, seed: int = 0, grid_step: float = 0.02,
                         max_servers: int = MAX_SERVERS, policy: Policy | str = Policy.DETA) -> VerifyResult:
    """Solve ``k`` random states with both the LP and the oracle."""
    rng = np.random.default_rng(seed)
    gaps, ns = [], []
    for _ in range(k):
        n = int(rng.integers(1, max_servers + 1))
        state = random_slot_state(rng, n)
        lp = solve(state, policy).objective
        orc = solve_oracle(state, grid_step, policy).objective
        gaps.append(relative_gap(lp, orc))
        ns.append(n)
    return VerifyResult(k, seed, grid_step, tuple(gaps), tuple(ns))
