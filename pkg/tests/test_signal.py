import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from valsalva_dde.models import NOMINAL_BASELINE, SubjectBaseline, nominal_parameters
from valsalva_dde.signal import (
    ExtrapolationError,
    ForcingModel,
    PressureSeries,
    SignalError,
    VmProfile,
    build_forcing,
    constant_forcing,
    extend_baseline,
    extract_sbp,
    fit_polynomial,
    forcing_f,
    forcing_from_json,
    forcing_g,
    forcing_to_json,
    moving_mean,
    read_pressure_csv,
    synth_pulsatile,
    synth_vm,
    write_forcing_trace,
    write_pressure_csv,
)

P = nominal_parameters()


def test_series_validation():
    with pytest.raises(SignalError):
        PressureSeries([0, 1], [1])
    with pytest.raises(SignalError):
        PressureSeries([0, 0], [1, 1])
    with pytest.raises(SignalError):
        PressureSeries([0, 1], [1, np.nan])
    with pytest.raises(SignalError):
        PressureSeries([], [])


def test_extract_sbp_sinusoid():
    t = np.arange(0, 10, 0.001)
    raw = PressureSeries(t, 100 + 20 * np.sin(2 * math.pi * 1.2 * t))
    sbp = extract_sbp(raw)
    inner = (t > 1) & (t < 9)
    np.testing.assert_allclose(sbp.P[inner], 120, atol=1e-4)


def test_extract_sbp_constant_fails():
    with pytest.raises(SignalError):
        extract_sbp(PressureSeries(np.arange(100.0), np.full(100, 90.0)))


def test_extract_sbp_triangle_ramp():
    t = np.linspace(0, 4, 401)
    P = np.interp(t, [0, 1, 2, 3, 4], [80, 110, 80, 130, 80])
    sbp = extract_sbp(PressureSeries(t, P))
    between = (t >= 1) & (t <= 3)
    np.testing.assert_allclose(sbp.P[between], 110 + 10 * (t[between] - 1), atol=1e-9)
    assert np.all(sbp.P[t < 1] == 110) and np.all(sbp.P[t > 3] == 130)


def test_extract_sbp_enforces_separation():
    t = np.linspace(0, 2, 201)
    P = np.zeros_like(t)
    P[[50, 60, 150]] = [10, 12, 11]  # 0.1 s apart: the lower one goes
    sbp = extract_sbp(PressureSeries(t, P))
    assert sbp.P[50] == 12


def test_moving_mean_examples():
    t = np.arange(0, 20, 0.01)
    const = PressureSeries(t, np.full(t.size, 7.0))
    np.testing.assert_allclose(moving_mean(const).P, 7.0)
    fast = PressureSeries(t, np.sin(2 * math.pi * t / 0.1))
    inner = (t > 1) & (t < 19)
    assert np.max(np.abs(moving_mean(fast, 1.0).P[inner])) < 0.05
    ramp = PressureSeries(t, t)
    np.testing.assert_allclose(moving_mean(ramp, 100.0).P, t.mean())
    with pytest.raises(ValueError):
        moving_mean(const, 0.0)


def test_moving_mean_matches_direct_average():
    rng = np.random.default_rng(0)
    t = np.cumsum(rng.uniform(0.005, 0.02, 500))
    s = PressureSeries(t, rng.normal(size=500))
    out = moving_mean(s, 0.3).P
    for k in rng.integers(0, 500, 40):
        sel = np.abs(t - t[k]) <= 0.15
        assert out[k] == pytest.approx(s.P[sel].mean(), abs=1e-12)


def test_fit_polynomial_examples():
    t = np.linspace(5, 25, 300)
    cubic = 0.01 * t ** 3 - 0.3 * t ** 2 + 2 * t + 100
    coeffs, t_map = fit_polynomial(PressureSeries(t, cubic))
    x = (t - t_map["shift"]) / t_map["scale"]
    fit = np.polynomial.polynomial.polyval(x, coeffs)
    assert np.max(np.abs(fit - cubic)) < 1e-8 * np.max(np.abs(cubic))
    assert t_map == {"shift": 15.0, "scale": 10.0}
    coeffs, _ = fit_polynomial(PressureSeries(t, np.full(t.size, 118.0)))
    assert coeffs[0] == pytest.approx(118.0) and np.max(np.abs(coeffs[1:])) < 1e-8
    with pytest.raises(SignalError):
        fit_polynomial(PressureSeries(t[:5], cubic[:5]))


def test_synthetic_vm_fit_residual():
    fm = build_forcing(synth_vm(NOMINAL_BASELINE), P, NOMINAL_BASELINE, pre=0, post=0, pulsatile=False)
    assert fm.notes["max_residual"] < 5


def test_extend_baseline_examples():
    s = PressureSeries(np.arange(0, 5, 0.5), np.linspace(120, 125, 10))
    same = extend_baseline(s, 0, 0)
    np.testing.assert_array_equal(same.t, s.t)
    np.testing.assert_array_equal(same.P, s.P)
    ext = extend_baseline(s, 10, 0)
    assert ext.t[0] == pytest.approx(-10) and np.all(ext.P[ext.t < 0] == 120)
    assert np.allclose(np.diff(ext.t), 0.5)
    vm = synth_vm(NOMINAL_BASELINE)
    longer = extend_baseline(vm, 0, 60)
    assert longer.span[1] - vm.span[1] == pytest.approx(60)
    with pytest.raises(ValueError):
        extend_baseline(s, -1, 0)


def test_pipeline_idempotent_at_baseline():
    flat = PressureSeries(np.arange(0, 60, 0.005), np.full(12000, 120.0))
    # 75 bpm puts every beat maximum on a sample, so the envelope is exactly 120
    fm = build_forcing(synth_pulsatile(flat, heart_rate=75.0), P, NOMINAL_BASELINE)
    t = np.linspace(*fm.span, 5001)
    assert np.max(np.abs(fm.sbp(t) - 120.0)) < 1e-6


def test_surrogate_flat_before_maneuver():
    fm = build_forcing(synth_pulsatile(synth_vm(NOMINAL_BASELINE, dt=0.005)), P, NOMINAL_BASELINE)
    t = np.linspace(fm.span[0], 0.0, 3001)
    dP = np.gradient(fm.sbp(t), t)
    assert np.max(np.abs(dP)) < 0.5


def test_forcing_at_baseline():
    fm = constant_forcing(120.0, P.replace(s_s=0.06), (0.0, 10.0), NOMINAL_BASELINE)
    q = fm.params.replace(t_s=20.0, t_e=30.0)
    assert forcing_f(5.0, fm.with_params(q)) == pytest.approx(0.0195, abs=5e-5)
    base = SubjectBaseline(117.0, 87.0, 27.0)
    q = nominal_parameters(base, t_s=100.0, t_e=110.0)
    fm = constant_forcing(base.P_bar, q, (0.0, 50.0), base)
    g = forcing_g(np.linspace(0, 50, 7), fm)
    T_s0 = q.tau_s * forcing_f(0.0, fm)
    # H' = -H/tau_H + (H_I H_s/tau_H) T_s + g vanishes at H = H_bar
    np.testing.assert_allclose(g, (base.H_bar - q.H_I * q.H_s * T_s0) / q.tau_H, rtol=1e-9)
    assert T_s0 == pytest.approx(0.2, rel=1e-12)


def test_forcing_bounded_and_jumps_at_maneuver():
    fm = build_forcing(synth_vm(NOMINAL_BASELINE), P, NOMINAL_BASELINE, pulsatile=False)
    t = np.linspace(*fm.span, 4001)
    f = forcing_f(t, fm)
    assert np.all((f > 0) & (f < P.K_s / P.tau_s))
    eps = 1e-9
    assert forcing_f(P.t_s, fm) > forcing_f(P.t_s - eps, fm) + 1e-4
    assert forcing_f(P.t_e + eps, fm) < forcing_f(P.t_e, fm) - 1e-4
    assert abs(forcing_f(0.5 * (P.t_s + P.t_e) + eps, fm) - forcing_f(0.5 * (P.t_s + P.t_e), fm)) < 1e-8


def test_extrapolation_error():
    fm = constant_forcing(120.0, P, (0.0, 10.0))
    with pytest.raises(ExtrapolationError):
        fm.sbp(10.5)
    with pytest.raises(ExtrapolationError):
        forcing_f(-1.0, fm)


def test_surrogate_positivity_warning():
    coeffs = np.zeros(11)
    coeffs[0] = -1.0
    with pytest.warns(RuntimeWarning):
        ForcingModel(coeffs, {"shift": 0, "scale": 1}, (-1, 1), P)


def test_synth_vm_examples():
    zero = synth_vm(NOMINAL_BASELINE, amplitudes=VmProfile(0, 0, 0, 0))
    np.testing.assert_array_equal(zero.P, 120.0)
    vm = synth_vm(NOMINAL_BASELINE, t_s=20, t_e=35)
    t = vm.t
    assert vm.P[(t > 20) & (t < 27)].min() < 120
    assert vm.P[(t > 35) & (t < 55)].max() > 120
    assert np.max(np.abs(vm.P[t >= 65] - 120)) < 1
    assert np.max(np.abs(np.diff(vm.P))) < 0.1  # no jumps at dt = 0.01
    with pytest.raises(ValueError):
        synth_vm(NOMINAL_BASELINE, t_s=30, t_e=20)


def test_synth_pulsatile_envelope_recovered():
    vm = synth_vm(NOMINAL_BASELINE, dt=0.002)
    sbp = extract_sbp(synth_pulsatile(vm))
    inner = (vm.t > 2) & (vm.t < vm.t[-1] - 2)
    assert np.max(np.abs(sbp.P[inner] - vm.P[inner])) < 0.5


def test_csv_and_json_round_trips(tmp_path):
    vm = synth_vm(NOMINAL_BASELINE, dt=0.1)
    write_pressure_csv(vm, tmp_path / "r.csv")
    back = read_pressure_csv(tmp_path / "r.csv")
    np.testing.assert_array_equal(back.t, vm.t)
    np.testing.assert_array_equal(back.P, vm.P)
    fm = build_forcing(vm, P, NOMINAL_BASELINE, pulsatile=False)
    text = json.dumps(forcing_to_json(fm))
    again = forcing_from_json(json.loads(text))
    assert again == fm
    write_forcing_trace(fm, tmp_path / "trace.csv")
    rows = (tmp_path / "trace.csv").read_text().splitlines()
    assert rows[0] == "t,sbp,f,g" and len(rows) > 100
    with pytest.raises(SignalError):
        forcing_from_json({"coeffs": [1.0]})


@pytest.mark.parametrize("text", ["t,P\n0,1,2\n", "t,P\n0,x\n", "", "t,P\n1,2\n0,3\n"])
def test_read_pressure_csv_rejects_malformed(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(SignalError):
        read_pressure_csv(path)


@settings(max_examples=50, deadline=None)
@given(st.floats(60, 200), st.floats(0.5, 3.0))
def test_constant_surrogate_property(level, window):
    s = PressureSeries(np.arange(0, 30, 0.05), np.full(600, level))
    fm = build_forcing(s, P, pulsatile=False, window=window, pre=5, post=5)
    t = np.linspace(*fm.span, 101)
    assert np.max(np.abs(fm.sbp(t) - level)) < 1e-6 * level
