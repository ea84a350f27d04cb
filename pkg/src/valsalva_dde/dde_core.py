"""Stiff integrator for delay differential equations with one constant delay.

The scheme is the 3-stage Radau IIA collocation method (order 5) with the
embedded error estimate of Hairer & Wanner's RADAU5 and the collocation
polynomial as continuous output. Delayed arguments are read from the
continuous output of previous steps, or from the constant history before
``t0``. Steps longer than the delay are handled by fixed-point iteration on
the current step's own collocation polynomial.

References
----------
.. [1] E. Hairer, G. Wanner, "Solving Ordinary Differential Equations II:
       Stiff and Differential-Algebraic Problems", Springer, 1996.
.. [2] N. Guglielmi, E. Hairer, "Implementing Radau IIA methods for stiff
       delay differential equations", Computing 67 (2001) 1-12.
"""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit, types
from numba.extending import is_jitted

__all__ = [
    "DdeSystem",
    "SolverConfig",
    "Trajectory",
    "DdeIntegrationError",
    "OutOfRangeError",
    "integrate",
    "dense_eval",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "RHS_SIGNATURE",
    "JAC_SIGNATURE",
    "rhs_kernel",
    "jac_kernel",
]

EPS = float(np.finfo(float).eps)

S6 = 6 ** 0.5
RADAU_C = np.array([(4 - S6) / 10, (4 + S6) / 10, 1.0])
RADAU_A = np.array([
    [(88 - 7 * S6) / 360, (296 - 169 * S6) / 1800, (-2 + 3 * S6) / 225],
    [(296 + 169 * S6) / 1800, (88 + 7 * S6) / 360, (-2 - 3 * S6) / 225],
    [(16 - S6) / 36, (16 + S6) / 36, 1 / 9],
])
# embedded error estimate weights and the real eigenvalue of inv(A)
RADAU_E = np.array([-13 - 7 * S6, -13 + 7 * S6, -1]) / 3
MU_REAL = 3 + 3 ** (2 / 3) - 3 ** (1 / 3)
# maps stage increments Z onto coefficients of x, x^2, x^3 with x = (t - t_n)/h
RADAU_P = np.array([
    [13 / 3 + 7 * S6 / 3, -23 / 3 - 22 * S6 / 3, 10 / 3 + 5 * S6],
    [13 / 3 - 7 * S6 / 3, -23 / 3 + 22 * S6 / 3, 10 / 3 - 5 * S6],
    [1 / 3, -8 / 3, 10 / 3],
])

NEWTON_MAXITER = 6
OVERLAP_MAXITER = 10
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
# derivative jumps at t0 + k*delay are tracked up to this k; beyond it the
# jump sits in a derivative higher than the method order
PROPAGATION_DEPTH = 5


class DdeIntegrationError(RuntimeError):
    """Raised when the integrator cannot continue.

    ``t`` is the last accepted time (the offending evaluation time for
    ``kind == "nonfinite"``), ``kind`` one of ``"step_underflow"``,
    ``"newton"`` or ``"nonfinite"``. ``partial`` holds the accepted steps.
    """

    partial = None

    def __init__(self, message: str, t: float, kind: str):
        super().__init__(f"{message} (t = {t!r})")
        self.t = t
        self.kind = kind


class OutOfRangeError(ValueError):
    pass


@dataclass(frozen=True)
class DdeSystem:
    """``dx/dt = rhs(t, x(t), x(t - delay))`` with ``x = history`` on ``[t0 - delay, t0]``.

    ``breakpoints`` are times where ``rhs`` itself jumps (e.g. the start
    and end of the maneuver). ``jac``, if given, returns ``d rhs / d x``
    with the same arguments as ``rhs``; otherwise it is approximated by
    forward differences.

    When ``args`` is given, ``rhs`` and ``jac`` take it as a fourth argument
    (a float array of parameters). If they are also numba-jitted kernels the
    stepping loop runs compiled.
    """

    rhs: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    delay: float
    history: np.ndarray
    breakpoints: tuple = ()
    jac: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None
    names: Optional[tuple] = None
    args: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.args is not None:
            a = np.array(self.args, dtype=float).reshape(-1)
            a.setflags(write=False)
            object.__setattr__(self, "args", a)
        hist = np.array(self.history, dtype=float).reshape(-1)
        hist.setflags(write=False)
        object.__setattr__(self, "history", hist)
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        if not self.delay > 0:
            raise ValueError("delay must be positive")
        if hist.size < 1:
            raise ValueError("history must have at least one component")
        if any(b2 <= b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if self.names is not None:
            if len(self.names) != hist.size:
                raise ValueError("names must match the state dimension")
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def dimension(self) -> int:
        return self.history.size


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-8
    abs_tol: float | Sequence[float] = 1e-10
    max_step: float = np.inf
    initial_step: float = 1e-3

    def __post_init__(self):
        atol = np.atleast_1d(np.asarray(self.abs_tol, dtype=float))
        if not (self.rel_tol > 0 and np.all(atol > 0) and self.max_step > 0
                and self.initial_step > 0):
            raise ValueError("solver tolerances and step limits must be strictly positive")
        if self.rel_tol > 1e-2:
            raise ValueError("rel_tol must not exceed 1e-2")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Solution mesh, states and a piecewise-cubic continuous extension.

    On ``[mesh[k], mesh[k+1]]`` the interpolant is
    ``states[k] + coeffs[k] @ [x, x**2, x**3]`` with
    ``x = (t - mesh[k]) / (mesh[k+1] - mesh[k])``.
    """

    mesh: np.ndarray
    states: np.ndarray
    coeffs: np.ndarray
    names: tuple = ()
    completed: bool = True
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mesh", "states", "coeffs"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{i}" for i in range(self.dimension)))

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @property
    def t0(self) -> float:
        return float(self.mesh[0])

    @property
    def tf(self) -> float:
        return float(self.mesh[-1])

    def __call__(self, t):
        return dense_eval(self, t)

    def component(self, key) -> int:
        if isinstance(key, (int, np.integer)):
            return int(key)
        return self.names.index(key)

    @classmethod
    def from_samples(cls, t, states, names=()) -> "Trajectory":
        """Build a trajectory from tabulated values using a not-a-knot cubic spline."""
        from scipy.interpolate import CubicSpline

        t = np.asarray(t, dtype=float)
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("sample times must be strictly increasing with at least two points")
        h = np.diff(t)
        if t.size < 4:
            slope = np.diff(states, axis=0) / h[:, None]
            coeffs = np.zeros((t.size - 1, states.shape[1], 3))
            coeffs[:, :, 0] = slope * h[:, None]
        else:
            spl = CubicSpline(t, states, axis=0)
            c = spl.c  # (4, N-1, n), highest power first
            coeffs = np.stack([c[2] * h[:, None], c[1] * h[:, None] ** 2, c[0] * h[:, None] ** 3], axis=-1)
        return cls(t, states, coeffs, tuple(names))


def dense_eval(traj: Trajectory, t):
    """Evaluate the continuous extension of ``traj`` at ``t`` (scalar or array)."""
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    mesh = traj.mesh
    if np.any(tt < mesh[0]) or np.any(tt > mesh[-1]) or np.any(np.isnan(tt)):
        raise OutOfRangeError(f"t outside trajectory span [{mesh[0]}, {mesh[-1]}]")
    if mesh.size == 1:
        out = np.broadcast_to(traj.states[0], (tt.size, traj.dimension)).copy()
        return out[0] if scalar else out
    idx = np.clip(np.searchsorted(mesh, tt, side="right") - 1, 0, mesh.size - 2)
    out = _poly_eval(mesh, traj.states, traj.coeffs, idx, tt)
    return out[0] if scalar else out


def _poly_eval(mesh, states, coeffs, idx, tt):
    x = (tt - mesh[idx]) / (mesh[idx + 1] - mesh[idx])
    q = coeffs[idx]
    return states[idx] + x[:, None] * (q[:, :, 0] + x[:, None] * (q[:, :, 1] + x[:, None] * q[:, :, 2]))


def _discontinuities(system: DdeSystem, t0: float, tf: float) -> np.ndarray:
    d = system.delay
    sources = [t0] + [b for b in system.breakpoints if t0 < b <= tf]
    points = set()
    for b in sources:
        for k in range(PROPAGATION_DEPTH + 1):
            tk = b + k * d
            if t0 < tk < tf:
                points.add(tk)
    points.add(tf)
    return np.array(sorted(points))


# The stepping loop below is written in the numba subset. It is compiled when
# the right-hand side is itself a jitted kernel and run as ordinary Python
# otherwise, so both routes execute the same algorithm.

@njit(cache=True)
def _rms(v):
    s = 0.0
    for x in v.ravel():
        s += x * x
    return math.sqrt(s / v.size)


@njit(cache=True)
def _left_of(x):
    return x - max(abs(x) * EPS, 1e-300)


@njit(cache=True)
def _right_of(x):
    return x + max(abs(x) * EPS, 1e-300)


@njit(cache=True)
def _is_member(x, values):
    for v in values:
        if v == x:
            return True
    return False


@njit(cache=True)
def _lookup(td, t0, hist, mesh, states, coeffs, count, out):
    """Write the state at ``td`` (not beyond the last accepted point) into ``out``."""
    if td <= t0 or count < 2:
        out[:] = hist
        return
    lo = 0
    hi = count - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mesh[mid] <= td:
            lo = mid
        else:
            hi = mid
    x = (td - mesh[lo]) / (mesh[lo + 1] - mesh[lo])
    for j in range(out.size):
        out[j] = states[lo, j] + x * (coeffs[lo, j, 0] + x * (coeffs[lo, j, 1] + x * coeffs[lo, j, 2]))


@njit(cache=True)
def _all_finite(v):
    for x in v.ravel():
        if not np.isfinite(x):
            return False
    return True


# status codes returned by the stepping loop
_OK, _ABORTED, _UNDERFLOW, _NONFINITE, _NEWTON = 0, 1, 2, 3, 4


def _radau_loop(rhs, jac, has_jac, args, hist, delay, t0, tf, breaks, user_breaks,
                rtol, atol, max_step, h0, abort_norm):
    n = hist.size
    stats = np.zeros(5, np.int64)  # steps, rejected, rhs calls, jacobians, factorizations
    newton_tol = max(10 * EPS / rtol, min(0.03, rtol ** 0.5))
    sqrt_eps = math.sqrt(EPS)

    cap = 256
    mesh = np.empty(cap)
    states = np.empty((cap, n))
    coeffs = np.empty((cap, n, 3))
    mesh[0] = t0
    states[0] = hist
    count = 1

    t = t0
    y = hist.copy()
    t_fail = t0
    xd_cur = np.empty(n)
    _lookup(t - delay, t0, hist, mesh, states, coeffs, count, xd_cur)
    t_eval = _right_of(t) if _is_member(t, user_breaks) else t
    f_cur = rhs(t_eval, y, xd_cur, args)
    stats[2] += 1
    if not _all_finite(f_cur):
        return _NONFINITE, t, t_eval, mesh[:1].copy(), states[:1].copy(), coeffs[:0].copy(), stats

    h_abs = min(h0, max_step, tf - t0)
    J = np.zeros((n, n))
    have_J = False
    jac_current = False
    h_factored = -1.0
    Minv = np.eye(3 * n)
    Rinv = np.eye(n)
    q_prev = np.zeros((n, 3))
    y_prev = y.copy()
    t_prev = t0
    h_prev = 1.0
    has_prev = False
    rejected = False
    newton_failed = False
    status = _OK
    bi = 0

    tn = np.empty(3)
    td = np.empty(3)
    known = np.zeros(3, np.bool_)
    xd = np.empty((3, n))
    F = np.empty((3, n))
    Z = np.zeros((3, n))

    while t < tf:
        h_plan = min(h_abs, max_step)
        while bi < breaks.size and breaks[bi] <= t:
            bi += 1
        tb = breaks[bi]
        t_new = t + h_plan
        landed = False
        # stretch by at most 1% rather than leave a sliver before a discontinuity
        if t_new >= tb - 0.01 * h_plan:
            if tb - t <= max_step:
                t_new = tb
                landed = True
            else:
                t_new = t + 0.5 * (tb - t)
        h = t_new - t
        if h < 10 * EPS * max(1.0, abs(t)):
            status = _NEWTON if newton_failed else _UNDERFLOW
            t_fail = t
            break

        if not have_J:
            stats[3] += 1
            if has_jac:
                J = np.ascontiguousarray(jac(t_eval, y, xd_cur, args)).reshape(n, n)
            else:
                for j in range(n):
                    step = sqrt_eps * max(1.0, abs(y[j]))
                    yp = y.copy()
                    yp[j] += step
                    J[:, j] = (rhs(t_eval, yp, xd_cur, args) - f_cur) / step
                    stats[2] += 1
            if not _all_finite(J):
                status = _NONFINITE
                t_fail = t_eval
                break
            have_J = True
            jac_current = True
            h_factored = -1.0
        if h != h_factored:
            M = np.eye(3 * n)
            for a in range(3):
                for b in range(3):
                    M[a * n:(a + 1) * n, b * n:(b + 1) * n] -= (h * RADAU_A[a, b]) * J
            Minv = np.ascontiguousarray(np.linalg.inv(M))
            Rinv = np.ascontiguousarray(np.linalg.inv((MU_REAL / h) * np.eye(n) - J))
            stats[4] += 1
            h_factored = h

        for i in range(3):
            tn[i] = t + h * RADAU_C[i]
        if landed and _is_member(t_new, user_breaks):
            # left-hand limit at the end of a step that stops on a jump
            tn[2] = _left_of(t_new)
        scale = atol + np.abs(y) * rtol

        if has_prev:
            for i in range(3):
                x = (tn[i] - t_prev) / h_prev
                Z[i] = y_prev + x * (q_prev[:, 0] + x * (q_prev[:, 1] + x * q_prev[:, 2])) - y
        else:
            Z[:] = 0.0

        overlap = False
        for i in range(3):
            td[i] = tn[i] - delay
            known[i] = td[i] <= t
            if known[i]:
                _lookup(td[i], t0, hist, mesh, states, coeffs, count, xd[i])
            else:
                overlap = True

        converged = False
        nonfinite = False
        n_iter_total = 0
        rate = -1.0
        for outer in range(OVERLAP_MAXITER if overlap else 1):
            if overlap:
                # delayed arguments that fall inside the current step come
                # from the step's own collocation polynomial
                q = np.dot(Z.T.copy(), RADAU_P)
                for i in range(3):
                    if not known[i]:
                        xo = (td[i] - t) / h
                        xd[i] = y + xo * (q[:, 0] + xo * (q[:, 1] + xo * q[:, 2]))
            W = Z.copy()
            ok = False
            dz_old = -1.0
            rate = -1.0
            for k in range(NEWTON_MAXITER):
                for i in range(3):
                    Fi = rhs(tn[i], y + W[i], xd[i], args)
                    stats[2] += 1
                    if not _all_finite(Fi):
                        nonfinite = True
                        t_fail = tn[i]
                        break
                    F[i] = Fi
                if nonfinite:
                    break
                R = W - h * np.dot(RADAU_A, F)
                dZ = -np.dot(Minv, R.ravel()).reshape(3, n)
                dz = _rms(dZ / scale)
                n_iter_total += 1
                if dz_old >= 0.0:
                    rate = dz / dz_old
                if rate >= 0.0 and (rate >= 1.0 or rate ** (NEWTON_MAXITER - k) / (1.0 - rate) * dz > newton_tol):
                    break
                W = W + dZ
                if dz == 0.0 or (rate >= 0.0 and rate / (1.0 - rate) * dz < newton_tol):
                    ok = True
                    break
                dz_old = dz
            if nonfinite or not ok:
                break
            if not overlap:
                Z = W
                converged = True
                break
            change = _rms((W - Z) / scale)
            Z = W
            if outer > 0 and change < newton_tol:
                converged = True
                break

        if nonfinite:
            status = _NONFINITE
            break
        if not converged:
            newton_failed = True
            if not jac_current:
                have_J = False
                continue
            h_abs = 0.5 * h
            rejected = True
            stats[1] += 1
            continue

        y_new = y + Z[2]
        ZE = np.dot(RADAU_E, Z) / h
        err = np.dot(Rinv, f_cur + ZE)
        err_scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
        err_norm = _rms(err / err_scale)
        if rejected and err_norm > 1.0:
            fe = rhs(t_eval, y + err, xd_cur, args)
            stats[2] += 1
            err = np.dot(Rinv, fe + ZE)
            err_norm = _rms(err / err_scale)

        safety = 0.9 * (2 * NEWTON_MAXITER + 1) / (2 * NEWTON_MAXITER + n_iter_total)
        if not err_norm <= 1.0:
            h_abs = h * max(MIN_FACTOR, safety * err_norm ** -0.25) if err_norm == err_norm else 0.5 * h
            rejected = True
            stats[1] += 1
            continue

        # accepted
        q = np.dot(Z.T.copy(), RADAU_P)
        if count == mesh.size:
            cap = 2 * mesh.size
            mesh2 = np.empty(cap)
            states2 = np.empty((cap, n))
            coeffs2 = np.empty((cap, n, 3))
            mesh2[:count] = mesh
            states2[:count] = states
            coeffs2[:count - 1] = coeffs[:count - 1]
            mesh, states, coeffs = mesh2, states2, coeffs2
        coeffs[count - 1] = q
        mesh[count] = t_new
        states[count] = y_new
        count += 1
        stats[0] += 1

        q_prev = q
        y_prev = y
        t_prev = t
        h_prev = h
        has_prev = True
        t = t_new
        y = y_new
        rejected = False
        newton_failed = False

        _lookup(t - delay, t0, hist, mesh, states, coeffs, count, xd_cur)
        t_eval = _right_of(t) if _is_member(t, user_breaks) else t
        f_cur = rhs(t_eval, y, xd_cur, args)
        stats[2] += 1
        if not _all_finite(f_cur):
            status = _NONFINITE
            t_fail = t_eval
            break

        factor = MAX_FACTOR if err_norm == 0.0 else min(MAX_FACTOR, safety * err_norm ** -0.25)
        if n_iter_total > 2 and rate > 1e-3:
            have_J = False
        else:
            jac_current = False
        if landed:
            h_abs = max(h * factor, h_plan) if factor >= 1.0 else h * factor
        elif 1.0 <= factor <= 1.2:
            h_abs = h
        else:
            h_abs = h * factor

        if np.max(np.abs(y)) > abort_norm:
            status = _ABORTED
            break

    return status, t, t_fail, mesh[:count].copy(), states[:count].copy(), coeffs[:count - 1].copy(), stats


# Compiled kernels share one signature so that the stepping loop is compiled
# once (and cached on disk) rather than once per right-hand side.
RHS_SIGNATURE = types.float64[::1](types.float64, types.float64[::1], types.float64[::1], types.float64[::1])
JAC_SIGNATURE = types.float64[:, ::1](types.float64, types.float64[::1], types.float64[::1], types.float64[::1])
_LOOP_SIGNATURE = types.Tuple((
    types.int64, types.float64, types.float64,
    types.float64[::1], types.float64[:, ::1], types.float64[:, :, ::1], types.int64[::1],
))(
    types.FunctionType(RHS_SIGNATURE), types.FunctionType(JAC_SIGNATURE), types.boolean,
    types.float64[::1], types.float64[::1], types.float64, types.float64, types.float64,
    types.float64[::1], types.float64[::1], types.float64, types.float64[::1],
    types.float64, types.float64, types.float64,
)


def rhs_kernel(fn):
    """Compile ``fn(t, x, x_delayed, args) -> dx/dt`` for the compiled stepping loop."""
    return njit(RHS_SIGNATURE, cache=True)(fn)


def jac_kernel(fn):
    """Compile ``fn(t, x, x_delayed, args) -> d rhs / d x`` for the compiled stepping loop."""
    return njit(JAC_SIGNATURE, cache=True)(fn)


def _no_jac(t, x, xd, args):
    return np.zeros((x.size, x.size))


@functools.lru_cache(maxsize=None)
def _compiled():
    return njit(_LOOP_SIGNATURE, cache=True)(_radau_loop), jac_kernel(_no_jac)


def _is_kernel(f, signature) -> bool:
    return is_jitted(f) and tuple(signature.args) in f.signatures


def integrate(system: DdeSystem, span, config: Optional[SolverConfig] = None, *,
              abort_norm: Optional[float] = None) -> Trajectory:
    """Integrate ``system`` over ``span = (t0, tf)``.

    Parameters
    ----------
    system : DdeSystem
    span : (float, float)
        Integration interval, ``tf > t0``.
    config : SolverConfig, optional
    abort_norm : float, optional
        Stop early (``Trajectory.completed = False``) once any state exceeds
        this magnitude. Used by parameter sweeps to cut off divergent runs.

    Returns
    -------
    Trajectory
        Mesh includes ``t0 + k*delay`` and every breakpoint inside the span.

    Raises
    ------
    DdeIntegrationError
        On step-size underflow, repeated Newton failure, or a non-finite
        right-hand side. The steps accepted so far are attached as
        ``partial``.
    """
    cfg = config or SolverConfig()
    t0, tf = float(span[0]), float(span[1])
    if not tf > t0:
        raise ValueError("span must satisfy tf > t0")

    n = system.dimension
    atol = np.broadcast_to(np.asarray(cfg.abs_tol, dtype=float), (n,)).copy()
    names = system.names or tuple(f"x{i}" for i in range(n))
    breaks = _discontinuities(system, t0, tf)
    user_breaks = np.array([b for b in system.breakpoints if t0 < b < tf], dtype=float)
    limit = np.inf if abort_norm is None else float(abort_norm)
    hist = np.array(system.history)

    compiled = (system.args is not None and _is_kernel(system.rhs, RHS_SIGNATURE)
                and (system.jac is None or _is_kernel(system.jac, JAC_SIGNATURE)))
    if compiled:
        loop, no_jac = _compiled()
        rhs = system.rhs
        jac = system.jac if system.jac is not None else no_jac
        args = np.array(system.args)
    else:
        loop = _radau_loop
        rhs, jac = _python_callables(system, n)
        args = None if system.args is None else np.array(system.args)

    status, t_last, t_fail, mesh, states, coeffs, counters = loop(
        rhs, jac, system.jac is not None, args, hist, float(system.delay), t0, tf,
        breaks, user_breaks, float(cfg.rel_tol), atol, float(cfg.max_step),
        float(cfg.initial_step), limit)

    stats = dict(zip(("n_steps", "n_rejected", "n_rhs", "n_jac", "n_lu"), (int(c) for c in counters)))
    traj = Trajectory(mesh, states, coeffs, names, status == _OK, stats)
    if status in (_OK, _ABORTED):
        return traj
    if status == _NONFINITE:
        err = DdeIntegrationError("non-finite right-hand side", float(t_fail), "nonfinite")
    elif status == _NEWTON:
        err = DdeIntegrationError("Newton iteration failed to converge", float(t_last), "newton")
    else:
        err = DdeIntegrationError("step size underflow", float(t_last), "step_underflow")
    err.partial = traj
    raise err


def _python_callables(system: DdeSystem, n: int):
    fun, jac_fun, extra = system.rhs, system.jac, system.args is not None

    def rhs(t, x, xd, args):
        f = fun(t, x, xd, args) if extra else fun(t, x, xd)
        return np.asarray(f, dtype=float).reshape(n)

    if jac_fun is None:
        return rhs, _no_jac

    def jac(t, x, xd, args):
        return np.asarray(jac_fun(t, x, xd, args) if extra else jac_fun(t, x, xd), dtype=float)

    return rhs, jac


def write_trajectory_csv(traj: Trajectory, path, t=None) -> None:
    """Write ``t,<state_0>,...`` rows with 17 significant digits.

    Rows are the solver mesh unless explicit sample times ``t`` are given.
    """
    if t is None:
        times, values = traj.mesh, traj.states
    else:
        times = np.asarray(t, dtype=float)
        values = dense_eval(traj, times)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *traj.names])
        for ti, row in zip(times, values):
            w.writerow([f"{ti:.17g}", *(f"{v:.17g}" for v in row)])


def read_trajectory_csv(path) -> Trajectory:
    """Read a trajectory CSV written by :func:`write_trajectory_csv`.

    The continuous extension is rebuilt from the tabulated rows with a
    cubic spline. Raises ``ValueError`` on malformed input.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and not r[0].lstrip().startswith("#")]
    if len(rows) < 3:
        raise ValueError(f"{path}: need a header and at least two data rows")
    header = [h.strip() for h in rows[0]]
    if header[0] != "t" or len(header) < 2:
        raise ValueError(f"{path}: header must start with 't' followed by state names")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    if not np.all(np.isfinite(data[:, 0])):
        raise ValueError(f"{path}: non-finite time value")
    return Trajectory.from_samples(data[:, 0], data[:, 1:], header[1:])
