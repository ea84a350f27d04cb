import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from valsalva_dde.dde_core import (
    DdeIntegrationError,
    DdeSystem,
    OutOfRangeError,
    SolverConfig,
    Trajectory,
    dense_eval,
    integrate,
    read_trajectory_csv,
    rhs_kernel,
    write_trajectory_csv,
)


def exact_linear_dde(a, d, t_end, x0=1):
    """x' = -a x(t - d), x = x0 on [-d, 0], solved exactly at ``t_end = m d``.

    Method of steps with rational arithmetic: on each interval of length
    ``d`` the solution is a polynomial in the local variable.
    """
    a, d = Fraction(a), Fraction(d)
    m = Fraction(t_end) / d
    assert m.denominator == 1
    prev = [Fraction(x0)]  # coefficients in s = (t - k d), ascending powers
    start = Fraction(x0)
    for _ in range(int(m)):
        integ = [Fraction(0)] + [c / (i + 1) for i, c in enumerate(prev)]
        cur = [start] + [-a * c for c in integ[1:]]
        start = sum(c * d ** i for i, c in enumerate(cur))
        prev = cur
    return float(start)


def linear_system(tau, delay=1.0, x0=1.0):
    return DdeSystem(lambda t, x, xd: -xd / tau, delay, [x0])


def zero_crossing_period(traj, t_lo, t_hi, comp=0):
    t = np.linspace(t_lo, t_hi, 20001)
    x = dense_eval(traj, t)[:, comp]
    idx = np.nonzero(np.sign(x[:-1]) * np.sign(x[1:]) < 0)[0]
    tz = t[idx] - x[idx] * (t[idx + 1] - t[idx]) / (x[idx + 1] - x[idx])
    return 2 * np.mean(np.diff(tz))


@pytest.mark.parametrize("tau", [2 * math.e, math.e, 2 / math.pi])
def test_matches_exact_method_of_steps(tau):
    traj = integrate(linear_system(tau), (0.0, 10.0))
    ref = exact_linear_dde(Fraction(1) / Fraction(tau), 1, 10)
    assert abs(traj.states[-1, 0] - ref) < 1e-8


def test_overlapping_steps_match_exact_solution():
    # delay much shorter than the natural step once the jumps have smoothed out
    d = 0.05
    sysm = DdeSystem(lambda t, x, xd: -xd, d, [1.0])
    traj = integrate(sysm, (0.0, 3.0), SolverConfig(rel_tol=1e-8, abs_tol=1e-12))
    assert np.max(np.diff(traj.mesh)) > d
    assert abs(traj.states[-1, 0] - exact_linear_dde(1, Fraction(1, 20), 3)) < 1e-8


def test_overdamped_decay_has_no_sign_change():
    traj = integrate(linear_system(2 * math.e), (0.0, 40.0))
    x = dense_eval(traj, np.linspace(0, 40, 4001))[:, 0]
    assert np.all(x > 0)
    assert np.all(np.diff(x) <= 1e-12)
    assert x[-1] < 1e-3


def test_zero_derivative_gives_constant():
    c = np.array([3.5, -1.25])
    traj = integrate(DdeSystem(lambda t, x, xd: np.zeros(2), 0.7, c), (0.0, 5.0))
    assert np.array_equal(traj.states, np.broadcast_to(c, traj.states.shape))
    assert np.allclose(dense_eval(traj, [0.3, 2.2, 4.9]), c, rtol=0, atol=0)


def test_hopf_point_period():
    traj = integrate(linear_system(2 / math.pi, x0=1.0), (0.0, 100.0))
    period = zero_crossing_period(traj, 50.0, 100.0)
    assert abs(period - 4.0) < 0.02 * 4.0


def test_dense_eval_reproduces_mesh():
    traj = integrate(linear_system(2 / math.pi), (0.0, 20.0))
    vals = dense_eval(traj, traj.mesh)
    assert np.allclose(vals, traj.states, rtol=1e-12, atol=0)
    assert traj.mesh[0] == 0.0 and traj.mesh[-1] == 20.0


def test_dense_eval_linear_solution():
    traj = integrate(DdeSystem(lambda t, x, xd: np.ones(1), 1.0, [0.0]), (0.0, 3.0))
    assert abs(dense_eval(traj, 0.5)[0] - 0.5) < 1e-8


def test_dense_eval_out_of_range():
    traj = integrate(linear_system(3.0), (0.0, 2.0))
    with pytest.raises(OutOfRangeError):
        dense_eval(traj, 2.5)
    with pytest.raises(OutOfRangeError):
        dense_eval(traj, [-0.1, 1.0])


def test_mesh_contains_delay_multiples_and_breakpoints():
    bps = (0.35, 2.5)
    sysm = DdeSystem(lambda t, x, xd: -xd + (1.0 if 0.35 <= t <= 2.5 else 0.0), 0.8, [0.2], breakpoints=bps)
    traj = integrate(sysm, (0.0, 6.0))
    mesh = set(traj.mesh.tolist())
    for k in range(1, 6):
        assert k * 0.8 in mesh
    for b in bps:
        assert b in mesh
        assert b + 0.8 in mesh


def test_breakpoint_jump_is_resolved_exactly():
    sysm = DdeSystem(lambda t, x, xd: np.array([1.0 if t >= 1.0 else 0.0]), 5.0, [0.0], breakpoints=(1.0,))
    traj = integrate(sysm, (0.0, 2.0))
    assert abs(dense_eval(traj, 1.0)[0]) < 1e-12
    assert abs(traj.states[-1, 0] - 1.0) < 1e-12


def test_history_argument_is_exact_before_first_delay():
    hist = np.array([0.3, -2.0])
    seen = []

    def rhs(t, x, xd):
        if t < 1.5:
            seen.append(xd.copy())
        return np.array([-xd[0], x[0] - x[1]])

    integrate(DdeSystem(rhs, 1.5, hist), (0.0, 4.0))
    assert seen
    assert all(np.array_equal(v, hist) for v in seen)


def test_deterministic_python_route():
    a = integrate(linear_system(2 / math.pi), (0.0, 30.0))
    b = integrate(linear_system(2 / math.pi), (0.0, 30.0))
    assert np.array_equal(a.mesh, b.mesh)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.coeffs, b.coeffs)


@rhs_kernel
def _linear_kernel(t, x, xd, args):
    out = np.empty(2)
    out[0] = -xd[0] / args[0]
    out[1] = -x[1] + args[1] * x[0]
    return out


def test_compiled_route_agrees_with_python_route():
    args = np.array([2.1 / math.pi, 0.5])
    ker = DdeSystem(_linear_kernel, 1.0, [1.0, 0.0], args=args)
    py = DdeSystem(lambda t, x, xd: np.array([-xd[0] / args[0], -x[1] + args[1] * x[0]]), 1.0, [1.0, 0.0])
    a = integrate(ker, (0.0, 40.0))
    b = integrate(py, (0.0, 40.0))
    a2 = integrate(ker, (0.0, 40.0))
    assert np.array_equal(a.states, a2.states)
    t = np.linspace(0, 40, 101)
    assert np.allclose(dense_eval(a, t), dense_eval(b, t), rtol=0, atol=1e-7)


def test_nonfinite_rhs_fails_with_time():
    sysm = DdeSystem(lambda t, x, xd: np.array([np.nan if t > 0.5 else -x[0]]), 1.0, [1.0])
    with pytest.raises(DdeIntegrationError) as info:
        integrate(sysm, (0.0, 2.0))
    assert info.value.kind == "nonfinite"
    assert info.value.t > 0.5
    assert info.value.partial.tf <= 0.5 + 1e-12


def test_finite_time_blowup_fails():
    # x' = x^2 with x(0) = 1 blows up at t = 1
    sysm = DdeSystem(lambda t, x, xd: x ** 2, 1.0, [1.0])
    with pytest.raises(DdeIntegrationError) as info:
        integrate(sysm, (0.0, 2.0))
    assert info.value.kind in ("step_underflow", "newton", "nonfinite")
    assert abs(info.value.t - 1.0) < 1e-6


def test_abort_norm_stops_early():
    sysm = DdeSystem(lambda t, x, xd: x, 1.0, [1.0])
    traj = integrate(sysm, (0.0, 50.0), abort_norm=1e3)
    assert not traj.completed
    assert traj.states[-1, 0] > 1e3
    assert traj.tf < 10.0


def test_steps_respect_max_step():
    traj = integrate(linear_system(2 * math.e), (0.0, 10.0), SolverConfig(max_step=0.05))
    assert np.max(np.diff(traj.mesh)) <= 0.05 + 1e-15


def test_error_decreases_with_tolerance():
    ref = exact_linear_dde(Fraction(1) / Fraction(2.5), 1, 12)
    errs, steps = [], []
    for tol in (1e-4, 1e-6, 1e-8, 1e-10):
        traj = integrate(linear_system(2.5), (0.0, 12.0), SolverConfig(rel_tol=tol, abs_tol=tol * 1e-2))
        errs.append(abs(traj.states[-1, 0] - ref))
        steps.append(traj.stats["n_steps"])
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
    order = -np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert order >= 3


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=0.1)
    with pytest.raises(ValueError):
        SolverConfig(abs_tol=[1e-8, -1.0])
    with pytest.raises(ValueError):
        SolverConfig(max_step=0.0)
    with pytest.raises(ValueError):
        DdeSystem(lambda t, x, xd: x, 0.0, [1.0])
    with pytest.raises(ValueError):
        DdeSystem(lambda t, x, xd: x, 1.0, [1.0], breakpoints=(2.0, 1.0))
    with pytest.raises(ValueError):
        integrate(linear_system(1.0), (1.0, 1.0))


def test_trajectory_is_read_only():
    traj = integrate(linear_system(3.0), (0.0, 1.0))
    with pytest.raises(ValueError):
        traj.states[0, 0] = 2.0


def test_csv_round_trip(tmp_path):
    sysm = DdeSystem(lambda t, x, xd: np.array([-xd[0], x[0] - x[1]]), 1.0, [1.0, 0.0], names=("T_s", "H"))
    traj = integrate(sysm, (0.0, 8.0))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    assert path.read_text().splitlines()[0] == "t,T_s,H"
    back = read_trajectory_csv(path)
    assert back.names == ("T_s", "H")
    assert np.array_equal(back.mesh, traj.mesh)
    assert np.array_equal(back.states, traj.states)
    t = np.linspace(0, 8, 41)
    assert np.allclose(dense_eval(back, t), dense_eval(traj, t), atol=1e-5)


@pytest.mark.parametrize("text", ["", "t,x\n1,2\n", "x,y\n0,1\n1,2\n", "t,x\n0,1\n1,abc\n", "t,x\n0,1\n1\n"])
def test_csv_rejects_malformed(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ValueError):
        read_trajectory_csv(path)


def test_from_samples_interpolates_smooth_data():
    t = np.linspace(0, 2 * np.pi, 200)
    traj = Trajectory.from_samples(t, np.sin(t))
    tt = np.linspace(0.1, 6.0, 50)
    assert np.allclose(dense_eval(traj, tt)[:, 0], np.sin(tt), atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(-1e3, 1e3, allow_nan=False), delay=st.floats(0.05, 5.0))
def test_constant_solution_property(c, delay):
    traj = integrate(DdeSystem(lambda t, x, xd: np.zeros(1), delay, [c]), (0.0, 3.0))
    assert np.all(traj.states == c)


@settings(max_examples=20, deadline=None)
@given(tau=st.floats(0.4, 8.0), delay=st.floats(0.2, 3.0))
def test_mesh_reproduction_property(tau, delay):
    traj = integrate(linear_system(tau, delay), (0.0, 6.0))
    assert np.allclose(dense_eval(traj, traj.mesh), traj.states, rtol=1e-12, atol=1e-300)
    assert delay in set(traj.mesh.tolist())
