import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from carbonsim.energy import (
    CalibrationError,
    CalibrationRow,
    EnergyParams,
    calibrate,
    load_table,
    predict_training_energy,
    round_energy,
)
from carbonsim.scenario import EdgeServer, data_path

TABLE = load_table(data_path("table1.csv"))


def server(**kw):
    base = dict(id="s", region_id="r", static_power=10.0, compute_energy_per_unit=1e-9, comm_energy_per_byte=1e-12)
    base.update(kw)
    return EdgeServer(**base)


def test_idle_server_burns_static_and_comm():
    s = server()
    p = EnergyParams.for_server(s, 60.0, 1_000_000)
    b = round_energy(s, p, 0, 50, 1_000_000)
    assert b.compute == 0.0
    assert b.static == pytest.approx(10 * 60 / 3.6e6)
    assert b.comm == pytest.approx(2 * 1e6 * 1e-12)
    assert b.total == b.static + b.comm


def test_compute_linear_in_samples():
    s = server()
    p = EnergyParams.for_server(s, 60.0, 0)
    one = round_energy(s, p, 1000, 5, 0)
    two = round_energy(s, p, 2000, 5, 0)
    assert two.compute == 2 * one.compute
    assert one.compute == pytest.approx(1e-9 * 1000 * 5)


def test_negative_samples_rejected():
    s = server()
    with pytest.raises(ValueError):
        round_energy(s, EnergyParams.for_server(s, 60, 0), -1, 1, 0)


@given(st.integers(0, 10**6), st.integers(1, 100), st.integers(0, 10**7), st.floats(0, 500), st.floats(0, 1e-6))
def test_breakdown_sums_exactly(samples, E, model_bytes, watts, k):
    s = server(static_power=watts, compute_energy_per_unit=k)
    b = round_energy(s, EnergyParams.for_server(s, 60.0, model_bytes), samples, E, model_bytes)
    assert min(b.static, b.compute, b.comm) >= 0
    assert abs(b.total - (b.static + b.compute + b.comm)) <= 1e-12 * max(b.total, 1e-300)


def test_table_transcription():
    assert sorted(TABLE) == ["CNN", "LSTM", "MLP"]
    assert sum(len(v) for v in TABLE.values()) == 18
    mlp = {r.servers: r.total_kwh for r in TABLE["MLP"]}
    assert mlp == {1: 0.0034, 3: 0.0041, 5: 0.0059, 7: 0.0074, 9: 0.0083, 11: 0.0086}
    lstm = {r.servers: r.total_kwh for r in TABLE["LSTM"]}
    assert lstm == {1: 1.8460, 3: 5.0605, 5: 7.6385, 7: 9.5800, 9: 12.0307, 11: 14.0039}
    assert TABLE["LSTM"][0].co2_g == 40.0


@pytest.mark.parametrize("model", ["MLP", "CNN", "LSTM"])
def test_calibration_residuals_within_15_percent(model):
    res = calibrate(TABLE[model], model)
    assert res.max_abs_residual <= 0.15
    assert min(res.params.static_energy_per_slot, res.params.train_energy_per_sample_epoch) >= 0


def test_generate_then_fit_recovers_params():
    truth = EnergyParams(3e-5, 5e-11, 0.0)
    rows = [CalibrationRow(n, 50, 100, predict_training_energy(truth, n, 50, 60000, 20)) for n in (1, 3, 5, 7)]
    fit = calibrate(rows, "custom", samples=60000, rounds=20)
    assert fit.params.static_energy_per_slot == pytest.approx(truth.static_energy_per_slot, rel=1e-6)
    assert fit.params.train_energy_per_sample_epoch == pytest.approx(truth.train_energy_per_sample_epoch, rel=1e-6)
    assert fit.max_abs_residual <= 1e-9


def test_collinear_comm_split_equally():
    truth = EnergyParams(2e-5, 5e-11, 0.0)
    rows = [CalibrationRow(n, 50, 100, predict_training_energy(truth, n, 50, 60000, 20)) for n in (1, 3, 5)]
    fit = calibrate(rows, "custom", samples=60000, rounds=20, comm_energy_per_model_exchange=None)
    assert fit.params.static_energy_per_slot == pytest.approx(1e-5, rel=1e-6)
    assert fit.params.comm_energy_per_model_exchange == pytest.approx(1e-5, rel=1e-6)


def test_calibration_preconditions():
    rows = [CalibrationRow(1, 50, 1, 1.0), CalibrationRow(2, 50, 1, 2.0)]
    with pytest.raises(CalibrationError):
        calibrate(rows, "MLP")
    with pytest.raises(CalibrationError):
        calibrate(rows + [CalibrationRow(2, 50, 1, 2.0)], "MLP")
    with pytest.raises(CalibrationError):
        calibrate([CalibrationRow(n, 50, 1, 0.0) for n in (1, 2, 3)], "MLP")
    with pytest.raises(CalibrationError):
        calibrate([CalibrationRow(n, 50, 1, 1.0) for n in (1, 2, 3)], "unknown-model")


def test_prediction_affine_in_servers():
    p = EnergyParams(1e-4, 1e-10, 2e-5)
    ns = np.arange(1, 12)
    y = np.array([predict_training_energy(p, n, 5, 1000, 10) for n in ns])
    assert np.allclose(np.diff(y, 2), 0, atol=1e-15)
