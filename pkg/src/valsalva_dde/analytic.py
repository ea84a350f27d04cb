"""Stability of the homogeneous reduced system.

The sympathetic tone of the homogeneous system obeys the scalar delay
equation ``tau_s T'(t) = -T(t - D_s)``. Exponential solutions ``e^{lambda t}``
require ``tau_s*lambda + exp(-lambda*D_s) = 0``, whose dominant root is
``lambda = W0(-D_s/tau_s)/D_s`` with ``W0`` the principal Lambert W branch.
Two rays through the origin of the (D_s, tau_s) plane split the behavior:
``tau_s = e*D_s`` (real double root) and ``D_s = (pi/2)*tau_s`` (root on the
imaginary axis).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "RegionClass",
    "ComplexRoot",
    "ConsistencyError",
    "OracleError",
    "ResonanceError",
    "lambert_w0",
    "principal_root",
    "complex_root_oracle",
    "characteristic_residual",
    "classify_homogeneous",
    "boundary_taus",
    "h_explicit",
]

INV_E = math.exp(-1.0)
BRANCH_SNAP = 4 * np.finfo(float).eps * INV_E
HALLEY_MAXITER = 50


class RegionClass(enum.IntEnum):
    """Behavior of ``T_s``; the integer value is the map code."""

    OverdampedSink = 0
    CriticallyDampedSink = 1
    StableFocus = 2
    LimitCycle = 3
    Unstable = 4


class ConsistencyError(ArithmeticError):
    pass


class OracleError(ArithmeticError):
    pass


class ResonanceError(ValueError):
    pass


@dataclass(frozen=True)
class ComplexRoot:
    """Root ``alpha +/- i*beta`` of the characteristic equation, ``beta >= 0``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")

    @property
    def value(self) -> complex:
        return complex(self.alpha, self.beta)


def _halley(z, w):
    """Halley iteration for ``w*exp(w) = z`` (elementwise on numpy arrays)."""
    active = np.ones(w.shape, dtype=bool)
    for _ in range(HALLEY_MAXITER):
        if not active.any():
            break
        wa = w[active]
        ew = np.exp(wa)
        f = wa * ew - z[active]
        wp1 = wa + 1
        with np.errstate(divide="ignore", invalid="ignore"):
            step = f / (ew * wp1 - (wa + 2) * f / (2 * wp1))
        step = np.where(f == 0, 0, step)
        step = np.where(np.isfinite(step), step, 0)
        w[active] = wa - step
        done = np.abs(step) <= 4 * np.finfo(float).eps * np.maximum(np.abs(wa), 1e-300)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return w


def _initial_guess(z):
    """Starting values chosen by region, as in Corless et al. (1996)."""
    w = np.empty(z.shape, dtype=complex)
    near_branch = np.abs(z + INV_E) < 0.3
    near_zero = (~near_branch & (z.real > -1.0) & (z.real < 1.5) & (np.abs(z.imag) < 1.0)
                 & (z.real > -2.5 * np.abs(z.imag) - 0.2))
    far = ~(near_branch | near_zero)
    # series about the branch point in p = sqrt(2(ez + 1))
    p = np.sqrt(2 * (math.e * z[near_branch] + 1))
    w[near_branch] = -1 + p - p ** 2 / 3 + 11 / 72 * p ** 3
    # [3/2] Pade approximant about 0
    zz = z[near_zero]
    w[near_zero] = zz * (1 + zz * (19 / 10 + zz * 17 / 60)) / (1 + zz * (29 / 10 + zz * 101 / 60))
    # asymptotic expansion log z - log log z + ...
    l1 = np.log(z[far])
    l2 = np.log(l1)
    w[far] = l1 - l2 + l2 / l1
    return w


def lambert_w0(z):
    """Principal branch ``W0`` of the Lambert W function.

    Parameters
    ----------
    z : complex or array_like
        The branch cut is ``(-inf, -1/e)``; points on it take the value
        approached from above, so ``Im W0(z)`` lies in ``(0, pi)``.

    Returns
    -------
    complex or ndarray of complex
        ``w`` with ``w*exp(w) = z``. Real ``z >= -1/e`` gives a real value
        (zero imaginary part). Inputs within a few ulps of ``-1/e`` return the
        branch point ``-1`` itself, since rounding makes their side of the
        cut meaningless.

    Notes
    -----
    Region-dependent initial guess followed by Halley iteration, see
    R. M. Corless et al., "On the Lambert W function", Adv. Comput. Math. 5
    (1996) 329-359.
    """
    scalar = np.ndim(z) == 0
    zc = np.atleast_1d(np.asarray(z, dtype=complex)).ravel()
    # take the upper side of the cut for real negative input (imag == -0.0)
    zc = zc.real + 1j * np.where(zc.imag == 0, 0.0, zc.imag)
    out = np.empty(zc.shape, dtype=complex)

    branch = np.abs(zc + INV_E) <= BRANCH_SNAP
    out[branch] = -1.0
    real = ~branch & (zc.imag == 0) & (zc.real >= -INV_E)
    if real.any():
        zr = zc.real[real]
        guess = _initial_guess(zr.astype(complex)).real
        out[real] = _halley(zr, guess)
    cplx = ~(branch | real)
    if cplx.any():
        zz = zc[cplx]
        out[cplx] = _halley(zz, _initial_guess(zz))
    out = out.reshape(np.shape(z))
    return complex(out) if scalar else out


def characteristic_residual(lam, D_s: float, tau_s: float):
    """``tau_s*lambda + exp(-lambda*D_s)``; zero at a characteristic root."""
    return tau_s * lam + np.exp(-lam * D_s)


def principal_root(D_s: float, tau_s: float, branch: int = 0) -> ComplexRoot:
    """Dominant characteristic root ``lambda = W0(-D_s/tau_s)/D_s``.

    Raises
    ------
    ConsistencyError
        If the root fails ``|tau_s*lambda + exp(-lambda*D_s)| < 1e-10``.
    """
    if branch != 0:
        raise NotImplementedError("only the principal branch is implemented")
    if not (D_s > 0 and tau_s > 0):
        raise ValueError("D_s and tau_s must be positive")
    lam = lambert_w0(-D_s / tau_s) / D_s
    res = abs(characteristic_residual(lam, D_s, tau_s))
    if not res < 1e-10:
        raise ConsistencyError(f"characteristic residual {res:.3e} at D_s={D_s}, tau_s={tau_s}")
    return ComplexRoot(lam.real, abs(lam.imag))


def complex_root_oracle(D_s: float, tau_s: float) -> ComplexRoot:
    """Complex root from the real and imaginary parts of the characteristic equation.

    With ``u = D_s*beta`` in ``(0, pi)``, the imaginary part gives
    ``D_s*alpha = -u*cot(u)`` and the real part then reduces to
    ``u*tau_s/D_s = exp(u*cot(u))*sin(u)``, solved by bracketed root finding.
    Does not use the Lambert W function.
    """
    if not (D_s > 0 and tau_s > 0):
        raise ValueError("D_s and tau_s must be positive")
    ratio = tau_s / D_s

    def g(u):
        return u * ratio - math.exp(u / math.tan(u)) * math.sin(u)

    lo, hi = 1e-9, math.pi - 1e-9
    glo, ghi = g(lo), g(hi)
    if not glo * ghi < 0:
        raise OracleError(f"no sign change in (0, pi) for D_s={D_s}, tau_s={tau_s}")
    u = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    beta = u / D_s
    return ComplexRoot(-beta / math.tan(u), beta)


def classify_homogeneous(D_s: float, tau_s: float, tol: float = 1e-12) -> RegionClass:
    """Region of ``(D_s, tau_s)`` relative to the two stability rays.

    Boundary tolerances are relative to ``tau_s`` so that classification
    is invariant under ``(D_s, tau_s) -> (c*D_s, c*tau_s)``.
    """
    if not (D_s > 0 and tau_s > 0):
        raise ValueError("D_s and tau_s must be positive")
    if abs(math.e * D_s - tau_s) <= tol * tau_s:
        return RegionClass.CriticallyDampedSink
    if math.e * D_s < tau_s:
        return RegionClass.OverdampedSink
    hopf = tau_s * math.pi / 2
    if abs(D_s - hopf) <= tol * tau_s:
        return RegionClass.LimitCycle
    if D_s < hopf:
        return RegionClass.StableFocus
    return RegionClass.Unstable


def boundary_taus(D_s: float) -> dict:
    """``tau_s`` values where the class changes at fixed ``D_s``."""
    return {"critical_damping": math.e * D_s, "hopf": 2 * D_s / math.pi}


def h_explicit(t, root: ComplexRoot, p, T_s0: float, H0: float):
    """Heart rate driven by ``T_s(t) = T_s0*exp(lambda*t)`` in the homogeneous system.

    Solves ``H' = -H/tau_H + (H_I*H_s/tau_H)*T_s`` with ``H(0) = H0``::

        H(t) = k*T_s(t) + (H0 - k*T_s0)*exp(-t/tau_H),  k = H_I*H_s/(tau_H*lambda + 1)

    For a complex root the result is complex; its real part is the response
    to ``T_s0*exp(alpha*t)*cos(beta*t)``.

    Parameters
    ----------
    p : ParameterSet
        Supplies ``tau_H``, ``H_I`` and ``H_s``.

    Raises
    ------
    ResonanceError
        When ``tau_H*lambda = -1``.
    """
    lam = root.value if root.beta != 0 else root.alpha
    denom = p.tau_H * lam + 1
    if abs(denom) < 1e-12:
        raise ResonanceError("tau_H*lambda = -1: the forced and free responses coincide")
    k = p.H_I * p.H_s / denom
    t = np.asarray(t, dtype=float)
    T_s = T_s0 * np.exp(lam * t)
    h = k * T_s + (H0 - k * T_s0) * np.exp(-t / p.tau_H)
    return h[()] if h.ndim == 0 else h
