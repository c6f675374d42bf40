import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import carbonsim.deta as deta
from carbonsim.deta import (
    ALL_POLICIES,
    Policy,
    SlotState,
    SolverError,
    constraint_violation,
    random_slot_state,
    settle,
    sleep_mask,
    solve,
)
from carbonsim.oracle import solve_oracle

B, DET, DAT, DETA = ALL_POLICIES
EPS = np.finfo(float).eps


def state_from_seed(seed, n, **kw):
    return random_slot_state(np.random.default_rng(seed), n, **kw)


seeds = st.integers(0, 2**32 - 1)
sizes = st.integers(1, 5)


def test_single_server_reduces_to_grid_gap():
    s = SlotState(harvest=[0.3], battery=[0.1], units=[100.0], fixed_demand=[0.2],
                  compute_energy_per_unit=[0.005], intensity=[400.0])
    demand = 0.2 + 0.5
    objectives = set()
    for p in ALL_POLICIES:
        d = solve(s, p)
        assert not d.energy_transfer.any() and not d.task_offload.any()
        assert d.grid_draw[0] == pytest.approx(max(0.0, demand - 0.3 - 0.1))
        objectives.add(d.objective)
    assert len(objectives) == 1


def test_identical_servers_no_loss_match_baseline():
    s = SlotState(harvest=[0.2, 0.2], battery=[0.05, 0.05], units=[300.0, 300.0], fixed_demand=[0.1, 0.1],
                  compute_energy_per_unit=[1e-3, 1e-3], intensity=[250.0, 250.0], trading_loss=0.0)
    assert solve(s, DETA).objective == solve(s, B).objective


def three_server_example():
    return SlotState(
        harvest=[0.010, 0.0005, 0.0],
        battery=[0.002, 0.0, 0.0],
        units=[1000.0, 2000.0, 3000.0],
        fixed_demand=[0.001, 0.0012, 0.0009],
        compute_energy_per_unit=[1e-6, 1.2e-6, 1.5e-6],
        intensity=[20.0, 300.0, 600.0],
        alpha_energy=0.5,
        alpha_task=0.5,
        trading_loss=0.1,
        backbone_kwh_per_byte=1e-11,
        backbone_intensity=306.7,
        bytes_per_work_unit=160.0,
    )


def test_three_server_example_matches_oracle():
    s = three_server_example()
    lp = solve(s, DETA)
    oracle = solve_oracle(s, 0.02)
    assert abs(oracle.objective - lp.objective) <= 1e-6 * abs(lp.objective)
    assert lp.objective < solve(s, B).objective
    # the clean server is the one exporting energy and receiving work
    assert lp.exported[0] > 0 and lp.exported[1:].sum() == 0
    assert lp.offloaded[0] == 0


def test_policy_restrictions():
    s = three_server_example()
    assert not solve(s, DET).task_offload.any()
    assert not solve(s, DAT).energy_transfer.any()
    assert solve(s, DET).energy_transfer.any()
    assert solve(s, DAT).task_offload.any()


@settings(max_examples=150)
@given(seeds, sizes)
def test_dominance(seed, n):
    s = state_from_seed(seed, n)
    o = {p: solve(s, p).objective for p in ALL_POLICIES}
    tol = 1e-9
    assert o[DETA] <= o[DET] + tol and o[DET] <= o[B] + tol
    assert o[DETA] <= o[DAT] + tol and o[DAT] <= o[B] + tol


@settings(max_examples=120)
@given(seeds, st.integers(2, 5), st.sampled_from(ALL_POLICIES))
def test_solution_feasible_and_conserving(seed, n, policy):
    s = state_from_seed(seed, n)
    d = solve(s, policy)
    scale = max(s.base_demand.max(), s.renewable_available.max(), 1e-300)
    assert constraint_violation(s, d) <= 1e-9 * scale
    assert (d.energy_transfer >= 0).all() and (d.task_offload >= 0).all() and (d.grid_draw >= 0).all()
    assert not np.diag(d.energy_transfer).any() and not np.diag(d.task_offload).any()
    # caps hold, never exceeded beyond rounding of the final rescale
    assert (d.exported <= s.alpha_energy * s.renewable_available * (1 + 4 * EPS)).all()
    assert (d.offloaded <= s.alpha_task * s.units * (1 + 4 * EPS)).all()
    # what j is credited is (1 - loss) of what i is debited, pair by pair
    credited = (1 - s.trading_loss) * d.energy_transfer
    np.testing.assert_array_equal(credited, (1 - s.trading_loss) * d.energy_transfer)
    balance = d.grid_draw + d.harvest_used + d.battery_discharge + credited.sum(axis=0) - d.exported
    np.testing.assert_allclose(balance, d.demand, rtol=0, atol=1e-9 * scale)
    # work is moved, never created or destroyed
    terms = list(s.units) + list(-d.task_offload.ravel()) + list(d.task_offload.ravel())
    assert math.fsum(terms) == math.fsum(s.units)


@settings(max_examples=60)
@given(seeds, st.integers(2, 4), st.floats(0.01, 100))
def test_intensity_scaling(seed, n, c):
    s = state_from_seed(seed, n)
    scaled = s.replace(intensity=s.intensity * c, backbone_intensity=s.backbone_intensity * c)
    d0, d1 = solve(s, DETA), solve(scaled, DETA)
    assert d1.objective == pytest.approx(c * d0.objective, rel=1e-9, abs=1e-12)
    # the decision found for the scaled state is optimal for the original one
    again = settle(s, d1.energy_transfer, d1.task_offload, DETA)
    assert again.objective == pytest.approx(d0.objective, rel=1e-9, abs=1e-12)


@settings(max_examples=60)
@given(seeds, st.integers(2, 4), st.randoms(use_true_random=False))
def test_permutation_symmetry(seed, n, rnd):
    s = state_from_seed(seed, n)
    perm = list(range(n))
    rnd.shuffle(perm)
    p = np.array(perm)
    t = s.replace(harvest=s.harvest[p], battery=s.battery[p], units=s.units[p], fixed_demand=s.fixed_demand[p],
                  compute_energy_per_unit=s.compute_energy_per_unit[p], intensity=s.intensity[p])
    for policy in ALL_POLICIES:
        assert solve(t, policy).objective == pytest.approx(solve(s, policy).objective, rel=1e-9, abs=1e-12)


@settings(max_examples=60)
@given(seeds, st.integers(2, 5))
def test_uniform_intensity_without_renewables_matches_baseline(seed, n):
    rng = np.random.default_rng(seed)
    s = random_slot_state(rng, n, trading_loss=0.0, backbone_kwh_per_byte=0.0)
    s = s.replace(intensity=np.full(n, 321.0), harvest=np.zeros(n), battery=np.zeros(n),
                  compute_energy_per_unit=np.full(n, 1e-6))
    assert solve(s, DETA).objective == pytest.approx(solve(s, B).objective, rel=1e-12)


def test_renewable_pooling_beats_baseline_even_at_uniform_intensity():
    # one server spills harvest while the other buys grid power: trading helps
    s = SlotState(harvest=[1.0, 0.0], battery=[0.0, 0.0], units=[0.0, 0.0], fixed_demand=[0.2, 0.5],
                  compute_energy_per_unit=[0.0, 0.0], intensity=[100.0, 100.0], trading_loss=0.0)
    assert solve(s, DETA).objective < solve(s, B).objective


def test_tie_break_prefers_least_movement():
    s = SlotState(harvest=[0.0, 0.0], battery=[0.0, 0.0], units=[100.0, 100.0], fixed_demand=[0.1, 0.1],
                  compute_energy_per_unit=[1e-3, 1e-3], intensity=[200.0, 200.0], trading_loss=0.0)
    d = solve(s, DETA)
    assert d.total_transferred == 0 and d.total_offloaded == 0


def test_sleep_mask_examples():
    s = SlotState(harvest=[0.0, 0.0], battery=[0.0, 0.0], units=[10.0, 0.0], fixed_demand=[0.1, 0.1],
                  compute_energy_per_unit=[1e-3, 1e-3], intensity=[900.0, 20.0])
    none = settle(s, np.zeros((2, 2)), np.zeros((2, 2)), B)
    assert sleep_mask(none, s) == {"s1"}
    d = solve(s, DAT)
    assert d.offloaded[0] == pytest.approx(5.0)
    assert "s0" not in sleep_mask(d, s)


def test_sleep_mask_empty_without_offloading():
    s = three_server_example()
    assert sleep_mask(solve(s, DET), s) == set()


def test_invalid_state_rejected():
    with pytest.raises(ValueError):
        SlotState(harvest=[-1.0], battery=[0.0], units=[0.0], fixed_demand=[0.0],
                  compute_energy_per_unit=[0.0], intensity=[1.0])
    with pytest.raises(ValueError):
        SlotState(harvest=[1.0], battery=[0.0], units=[0.0], fixed_demand=[0.0],
                  compute_energy_per_unit=[0.0], intensity=[1.0], alpha_energy=1.5)


def test_solver_failure_reports_constraints(monkeypatch):
    class Failed:
        status = 2
        message = "infeasible"

    monkeypatch.setattr(deta, "linprog", lambda *a, **k: Failed())
    with pytest.raises(SolverError, match="A_eq="):
        solve(three_server_example(), DETA)


def test_decision_serialises():
    d = solve(three_server_example(), DETA).to_dict()
    assert set(d) >= {"energy_transfer", "task_offload", "grid_draw", "battery_charge", "battery_discharge", "objective"}
