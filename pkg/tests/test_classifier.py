import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from valsalva_dde.analytic import RegionClass, classify_homogeneous
from valsalva_dde.classifier import (
    BehaviorClass,
    ClassifierConfig,
    WindowError,
    amplitude_regression,
    classify_trajectory,
    find_extrema,
)
from valsalva_dde.dde_core import Trajectory
from valsalva_dde.models import nominal_parameters
from valsalva_dde.sweep import HOMOGENEOUS, classify_cell

SINKS = (RegionClass.OverdampedSink, RegionClass.CriticallyDampedSink)


def sampled(fn, t0, t1, dt=1e-3):
    t = np.arange(t0, t1 + 0.5 * dt, dt)
    return Trajectory.from_samples(t, fn(t)[:, None], names=("T_s",))


def test_extrema_of_damped_sine():
    traj = sampled(lambda t: np.exp(-t) * np.sin(t), 0.0, 20.0)
    maxima, minima = find_extrema(traj, 0, ClassifierConfig(t_cut=0.0))
    ext = np.sort(np.concatenate([maxima[:, 0], minima[:, 0]]))
    assert ext.size >= 5
    expected = math.pi / 4 + math.pi * np.arange(ext.size)
    assert np.max(np.abs(ext - expected)) < 1e-3
    assert np.all(maxima[:, 0] % (2 * math.pi) < math.pi)


def test_monotone_signal_has_no_extrema():
    traj = sampled(lambda t: np.exp(-0.3 * t), 0.0, 20.0)
    maxima, minima = find_extrema(traj)
    assert maxima.size == 0 and minima.size == 0
    assert classify_trajectory(traj).behavior is BehaviorClass.Sink


def test_close_extrema_filtered():
    # a minimum 0.05 s after the first maximum is dropped
    traj = sampled(lambda t: np.interp(t, [0, 1, 1.05, 2, 3], [0, 1, 0.98, 1.5, 0]), 0.0, 3.0)
    maxima, minima = find_extrema(traj, 0, ClassifierConfig(resample_dt=1e-3))
    assert minima.size == 0
    np.testing.assert_allclose(maxima[:, 0], [1.0, 2.0], atol=2e-3)
    kept, _ = find_extrema(traj, 0, ClassifierConfig(resample_dt=1e-3, min_extrema_sep=0.01))
    _, close = find_extrema(traj, 0, ClassifierConfig(resample_dt=1e-3, min_extrema_sep=0.01))
    assert len(kept) == 2 and close[:, 0] == pytest.approx([1.05], abs=2e-3)


def test_regression_examples():
    assert amplitude_regression([1, 1, 1])[1:] == (0.0, 1.0)
    b0, b1, r2 = amplitude_regression([3, 2, 1])
    assert (b0, b1, r2) == pytest.approx((4, -1, 1))
    b0, b1, r2 = amplitude_regression([1, 2, 2, 3])
    assert b1 == pytest.approx(0.6) and r2 == pytest.approx(0.9)
    geo = [0.1, 0.2, 0.4, 0.8, 1.6]
    assert amplitude_regression(geo)[1] == pytest.approx(0.36)
    assert amplitude_regression(10 * np.array(geo))[1] == pytest.approx(3.6)
    with pytest.raises(ValueError):
        amplitude_regression([1.0])


def _from_envelope(envelope, period=2.0, t1=40.0):
    return sampled(lambda t: envelope(t) * np.cos(2 * math.pi * t / period), 0.0, t1, dt=2e-3)


def test_canonical_signals():
    cfg = ClassifierConfig(t_cut=0.5)
    assert classify_trajectory(_from_envelope(lambda t: np.exp(-0.1 * t)), 0, cfg).behavior is BehaviorClass.SpiralIn
    res = classify_trajectory(_from_envelope(lambda t: 0.15 + 0 * t), 0, cfg)
    assert res.behavior is BehaviorClass.LimitCycle
    np.testing.assert_allclose(res.amplitudes, 0.3, atol=1e-6)
    assert res.r2 == 1.0
    grow = _from_envelope(lambda t: 0.05 * np.exp(0.2 * t), t1=30.0)
    assert classify_trajectory(grow, 0, cfg).behavior is BehaviorClass.SpiralOut
    assert classify_trajectory(sampled(lambda t: 1 + np.exp(-t), 0, 20), 0, cfg).behavior is BehaviorClass.Sink


def test_scale_dependence_of_slope_threshold():
    t = np.arange(0, 10.5, 1e-3)
    geo = [0.1, 0.2, 0.4, 0.8, 1.6]
    # triangle-like wave with peak-to-trough amplitudes geo at unit spacing
    knots_t = np.arange(0, 10.5, 1.0)
    vals = np.zeros(knots_t.size)
    vals[1:10:2] = geo
    small = Trajectory.from_samples(t, np.interp(t, knots_t, vals)[:, None])
    big = Trajectory.from_samples(t, 10 * np.interp(t, knots_t, vals)[:, None])
    cfg = ClassifierConfig(t_cut=0.5)
    a = classify_trajectory(small, 0, cfg)
    # slope inside [eta2, eta1] with r^2 above mu: a limit cycle at this scale
    assert a.slope == pytest.approx(0.36, abs=1e-3) and a.behavior is BehaviorClass.LimitCycle
    assert classify_trajectory(big, 0, cfg).behavior is BehaviorClass.SpiralOut
    norm = classify_trajectory(big, 0, ClassifierConfig(t_cut=0.5, normalize=True))
    assert norm.slope == pytest.approx(3.6, abs=0.05)


def test_two_amplitudes_use_trend_only():
    cfg = ClassifierConfig(t_cut=0.5)
    t = np.arange(0, 5.5, 1e-3)
    knots = np.arange(0, 6.0, 1.0)

    def tri(v):
        return Trajectory.from_samples(t, np.interp(t, knots, v)[:, None])

    down = classify_trajectory(tri([0, 1, 0, 0.9, 0, 0]), 0, cfg)
    assert down.amplitudes.size == 2 and down.behavior is BehaviorClass.SpiralIn
    assert math.isnan(down.r2)
    flat = classify_trajectory(tri([0, 1, 0, 1, 0, 0]), 0, cfg)
    assert flat.behavior is BehaviorClass.LimitCycle


def test_single_amplitude_is_spiral_in():
    t = np.arange(0, 4, 1e-3)
    traj = Trajectory.from_samples(t, np.interp(t, [0, 1, 2, 4], [0, 1, -1, -0.5])[:, None])
    assert classify_trajectory(traj, 0, ClassifierConfig(t_cut=0.5)).behavior is BehaviorClass.SpiralIn


def test_divergence_guard():
    t = np.linspace(0, 10, 1001)
    traj = Trajectory.from_samples(t, (1e-3 * np.exp(2 * t))[:, None])
    res = classify_trajectory(traj)
    assert res.behavior is BehaviorClass.SpiralOut and res.diverged


def test_window_errors():
    traj = sampled(np.sin, 0.0, 10.0)
    with pytest.raises(WindowError):
        classify_trajectory(traj, 0, ClassifierConfig(t_cut=10.0))
    with pytest.raises(WindowError):
        classify_trajectory(traj, 0, ClassifierConfig(t_cut=-1.0))


def test_config_validation():
    for bad in ({"eta1": -1}, {"eta2": 0.1}, {"mu": 1.0}, {"amp_floor": 0}, {"resample_dt": 0}):
        with pytest.raises(ValueError):
            ClassifierConfig(**bad)


def test_deterministic_and_dict():
    traj = _from_envelope(lambda t: np.exp(-0.1 * t))
    a = classify_trajectory(traj, 0, ClassifierConfig(t_cut=0.5))
    b = classify_trajectory(traj, 0, ClassifierConfig(t_cut=0.5))
    assert a.as_dict() == b.as_dict()
    assert set(a.as_dict()) == {"class", "n_extrema", "amplitudes", "slope", "r2", "diverged"}


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50), st.sampled_from([0.0, -0.05, 0.05]))
def test_time_shift_invariance(shift, rate):
    def fn(t):
        return np.exp(rate * t) * np.cos(2 * math.pi * t / 3)

    base = sampled(fn, 0.0, 30.0, dt=5e-3)
    moved = sampled(lambda t: fn(t - shift), shift, shift + 30.0, dt=5e-3)
    a = classify_trajectory(base, 0, ClassifierConfig(t_cut=1.0))
    b = classify_trajectory(moved, 0, ClassifierConfig(t_cut=1.0 + shift))
    assert a.behavior is b.behavior


def test_agrees_with_analytic_theory_away_from_boundaries():
    p = nominal_parameters()
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 200:
        d, tau = rng.uniform(0.1, 10, 2)
        r = tau / d
        if min(abs(r / math.e - 1), abs(r / (2 / math.pi) - 1)) < 0.05:
            continue
        region, failed, _ = classify_cell(d, tau, p, HOMOGENEOUS)
        expected = classify_homogeneous(d, tau)
        if expected in SINKS:
            assert region in SINKS, (d, tau)
        else:
            assert region is expected, (d, tau, region, expected)
        checked += 1
