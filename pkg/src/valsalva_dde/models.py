"""Baroreflex response to the Valsalva maneuver.

The full model has states ``[eps_bc, eps_ba, T_p, T_s, H]``: carotid and
aortic baroreceptor strains, parasympathetic and sympathetic tone, and heart
rate. Systolic pressure drives the carotid pathway directly and the aortic
pathway after subtracting the thoracic pressure, which steps to 40 mmHg
during the maneuver. Only the sympathetic equation carries the delay ``D_s``.

The reduced model keeps ``[T_s, H]``. The strains and ``T_p`` are replaced by
their quasi-steady values and the carotid pathway is dropped (``B = 0``),
which leaves a linear delay system driven by the forcing terms ``f(t)`` and
``g(t)``.
"""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np
from numba import njit
from scipy.special import expit

from .dde_core import DdeSystem, jac_kernel, rhs_kernel

__all__ = [
    "ParameterSet",
    "SubjectBaseline",
    "ParameterDerivationError",
    "SUBJECTS",
    "NOMINAL_BASELINE",
    "FULL_STATE_NAMES",
    "REDUCED_STATE_NAMES",
    "THORACIC_PRESSURE",
    "T_P0",
    "T_S0",
    "max_heart_rate",
    "thoracic_pressure",
    "wall_strain",
    "neural_drive",
    "efferent_sigmoids",
    "forcing_terms",
    "full_rhs",
    "reduced_rhs",
    "derive_parameters",
    "nominal_parameters",
    "initial_state",
    "full_system",
    "reduced_system",
    "read_parameter_file",
    "parameters_from_mapping",
    "write_parameter_file",
]

THORACIC_PRESSURE = 40.0  # mmHg during the breath hold
T_P0 = 0.8
T_S0 = 0.2
FULL_STATE_NAMES = ("eps_bc", "eps_ba", "T_p", "T_s", "H")
REDUCED_STATE_NAMES = ("T_s", "H")


class ParameterDerivationError(ValueError):
    pass


@dataclass(frozen=True)
class SubjectBaseline:
    """Resting systolic pressure ``P_bar`` (mmHg), heart rate ``H_bar`` (bpm) and age (years)."""

    P_bar: float
    H_bar: float
    age: float

    def __post_init__(self):
        for name in ("P_bar", "H_bar", "age"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


SUBJECTS = {
    1: SubjectBaseline(P_bar=149.0, H_bar=98.0, age=21.0),
    2: SubjectBaseline(P_bar=117.0, H_bar=87.0, age=27.0),
    3: SubjectBaseline(P_bar=83.0, H_bar=94.0, age=57.0),
}
# a generic resting subject used when no data is supplied
NOMINAL_BASELINE = SubjectBaseline(P_bar=120.0, H_bar=80.0, age=30.0)


@dataclass(frozen=True)
class ParameterSet:
    """Model constants plus the sympathetic delay ``D_s``.

    Units: ``B`` 1/s; ``K_*``, ``A``, ``H_p``, ``H_s`` dimensionless;
    ``tau_*``, ``q_p``, ``q_s``, ``D_s``, ``t_s``, ``t_e`` in s; ``q_w`` 1/mmHg;
    ``s_w`` mmHg; ``s_p``, ``s_s`` 1/s; ``H_I`` bpm.
    """

    A: float
    B: float
    K_b: float
    K_p: float
    K_s: float
    tau_b: float
    tau_p: float
    tau_s: float
    tau_H: float
    q_w: float
    q_p: float
    q_s: float
    s_w: float
    s_p: float
    s_s: float
    H_I: float
    H_p: float
    H_s: float
    D_s: float
    t_s: float
    t_e: float

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = float(getattr(self, f.name))
            object.__setattr__(self, f.name, v)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
            if f.name == "B":
                if not 0.0 <= v <= 1.0:
                    raise ValueError("B must lie in [0, 1]")
            elif not v > 0:
                raise ValueError(f"{f.name} must be positive")
        if not self.t_e > self.t_s:
            raise ValueError("t_e must exceed t_s")

    @classmethod
    def names(cls) -> tuple:
        return tuple(f.name for f in dataclasses.fields(cls))

    def replace(self, **changes) -> "ParameterSet":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def max_heart_rate(age: float) -> float:
    """Age-predicted maximal heart rate (Tanaka et al. 2001), bpm."""
    return 208.0 - 0.7 * age


def thoracic_pressure(t, p: ParameterSet):
    """40 mmHg for ``t_s <= t <= t_e``, otherwise 0."""
    t = np.asarray(t, dtype=float)
    out = np.where((t >= p.t_s) & (t <= p.t_e), THORACIC_PRESSURE, 0.0)
    return out[()] if out.ndim == 0 else out


def wall_strain(P, p: ParameterSet):
    """Arterial wall strain ``1 - sqrt((1 + e)/(A + e))`` with ``e = exp(-q_w (P - s_w))``.

    Rewritten in terms of ``exp(q_w (P - s_w))`` for low pressures so that the
    ``P -> -inf`` limit evaluates to 0 instead of ``inf/inf``.
    """
    x = p.q_w * (np.asarray(P, dtype=float) - p.s_w)
    with np.errstate(over="ignore"):
        e_neg = np.exp(-np.maximum(x, 0.0))  # used where x >= 0
        e_pos = np.exp(np.minimum(x, 0.0))  # used where x < 0
    ratio = np.where(x >= 0, (1 + e_neg) / (p.A + e_neg), (e_pos + 1) / (p.A * e_pos + 1))
    out = 1 - np.sqrt(ratio)
    return out[()] if out.ndim == 0 else out


def neural_drive(eps_wc, eps_bc, eps_wa, eps_ba, p: ParameterSet):
    """Convex combination of carotid and aortic relative strains."""
    return p.B * (eps_wc - eps_bc) + (1 - p.B) * (eps_wa - eps_ba)


def efferent_sigmoids(n, p: ParameterSet):
    """Parasympathetic (increasing) and sympathetic (decreasing) saturation of ``n``."""
    n = np.asarray(n, dtype=float)
    G_p = expit(p.q_p * (n - p.s_p))
    G_s = expit(-p.q_s * (n - p.s_s))
    return (G_p[()], G_s[()]) if n.ndim == 0 else (G_p, G_s)


def forcing_terms(P_a, p: ParameterSet):
    """Reduced-model forcing ``(f, g)`` for aortic pressure ``P_a``.

    With ``B = 0`` and quasi-steady strain the drive is ``n = (1 - K_b) eps_w(P_a)``;
    ``f = (K_s/tau_s) G_s(n)`` and ``g = (H_I/tau_H)(1 - H_p K_p G_p(n))``.
    """
    n = (1 - p.K_b) * wall_strain(P_a, p)
    G_p, G_s = efferent_sigmoids(n, p)
    f = p.K_s / p.tau_s * G_s
    g = p.H_I / p.tau_H * (1 - p.H_p * p.K_p * G_p)
    return f, g


def full_rhs(t, x, x_del, p: ParameterSet, sbp: Callable[[float], float], thoracic: bool = True):
    """Right-hand side of the five-state model.

    Parameters
    ----------
    x, x_del : array_like, shape (5,)
        States at ``t`` and ``t - D_s``; only ``x_del[3]`` (``T_s``) is used.
    sbp : callable
        Systolic pressure ``SBP(t)`` in mmHg.
    thoracic : bool
        Set False to drop the thoracic pressure step.
    """
    eps_bc, eps_ba, T_p, T_s, H = x
    P_c = sbp(t)
    P_a = P_c - (thoracic_pressure(t, p) if thoracic else 0.0)
    eps_wc = wall_strain(P_c, p)
    eps_wa = wall_strain(P_a, p)
    n = neural_drive(eps_wc, eps_bc, eps_wa, eps_ba, p)
    G_p, G_s = efferent_sigmoids(n, p)
    H_tilde = p.H_I * (1 - p.H_p * T_p + p.H_s * T_s)
    return np.array([
        (-eps_bc + p.K_b * eps_wc) / p.tau_b,
        (-eps_ba + p.K_b * eps_wa) / p.tau_b,
        (-T_p + p.K_p * G_p) / p.tau_p,
        (-x_del[3] + p.K_s * G_s) / p.tau_s,
        (-H + H_tilde) / p.tau_H,
    ])


def reduced_rhs(t, x, x_del, p: ParameterSet, forcing=None):
    """Right-hand side of the two-state model ``[T_s, H]``.

    ``forcing`` is any object with an ``sbp(t)`` method (a ``ForcingModel``);
    ``None`` gives the homogeneous system ``f = g = 0``. The forcing terms are
    evaluated with ``p``, so sweeping ``tau_s`` also rescales ``f``.
    """
    if forcing is None:
        f = g = 0.0
    else:
        f, g = forcing_terms(forcing.sbp(t) - thoracic_pressure(t, p), p)
    return np.array([
        -x_del[0] / p.tau_s + f,
        -x[1] / p.tau_H + p.H_I * p.H_s / p.tau_H * x[0] + g,
    ])


def derive_parameters(base: SubjectBaseline, p: ParameterSet, T_p0: float = T_P0,
                      T_s0: float = T_S0, H_M: Optional[float] = None):
    """Half-saturations and heart-rate gains that put the resting state at equilibrium.

    The resting drive ``n_bar`` is evaluated at ``P = base.P_bar`` with zero
    thoracic pressure and steady strains ``eps_b = K_b eps_w``.

    Returns
    -------
    (s_p, s_s, H_p, H_s)

    Raises
    ------
    ParameterDerivationError
        If ``K_p <= 2 T_p0`` style conditions make a log argument non-positive.
    """
    eps_w = wall_strain(base.P_bar, p)
    n_bar = neural_drive(eps_w, p.K_b * eps_w, eps_w, p.K_b * eps_w, p)
    if not p.K_p / T_p0 - 1 > 0:
        raise ParameterDerivationError(f"K_p = {p.K_p} must exceed T_p0 = {T_p0}")
    if not p.K_s / T_s0 - 1 > 0:
        raise ParameterDerivationError(f"K_s = {p.K_s} must exceed T_s0 = {T_s0}")
    if H_M is None:
        H_M = max_heart_rate(base.age)
    s_p = n_bar + math.log(p.K_p / T_p0 - 1) / p.q_p
    s_s = n_bar - math.log(p.K_s / T_s0 - 1) / p.q_s
    H_s = (H_M / p.H_I - 1) / p.K_s
    H_p = (1 - base.H_bar / p.H_I + H_s * T_s0) / T_p0
    return float(s_p), float(s_s), float(H_p), float(H_s)


_TABLE_VALUES = dict(
    A=5.0, B=0.5, K_b=0.1, K_p=5.0, K_s=5.0, tau_b=0.9, tau_p=1.8, tau_s=10.0, tau_H=0.5,
    q_w=0.04, q_p=10.0, q_s=10.0, H_I=100.0, D_s=3.0,
)
_DERIVED = ("s_w", "s_p", "s_s", "H_p", "H_s")


def nominal_parameters(base: SubjectBaseline = NOMINAL_BASELINE, t_s: float = 20.0, t_e: float = 35.0,
                       **overrides) -> ParameterSet:
    """Nominal constants with ``s_w = P_bar`` and the derived parameters filled in.

    ``overrides`` replace table values before derivation; an override of a
    derived parameter (``s_w``, ``s_p``, ``s_s``, ``H_p``, ``H_s``) is kept as given.
    """
    unknown = set(overrides) - set(ParameterSet.names())
    if unknown:
        raise ValueError(f"unknown parameter(s): {sorted(unknown)}")
    values = dict(_TABLE_VALUES, s_w=base.P_bar, t_s=t_s, t_e=t_e)
    values.update({k: v for k, v in overrides.items() if k not in _DERIVED[1:]})
    # placeholders, replaced below
    provisional = ParameterSet(**values, s_p=1.0, s_s=1.0, H_p=1.0, H_s=1.0)
    s_p, s_s, H_p, H_s = derive_parameters(base, provisional)
    derived = dict(s_p=s_p, s_s=s_s, H_p=H_p, H_s=H_s)
    derived.update({k: v for k, v in overrides.items() if k in _DERIVED[1:]})
    return provisional.replace(**derived)


def initial_state(p: ParameterSet, base: SubjectBaseline, literal_strain: bool = False,
                  T_p0: float = T_P0, T_s0: float = T_S0):
    """Constant history ``[eps_bc, eps_ba, T_p, T_s, H]`` and its ``[T_s, H]`` projection.

    Strains default to the steady state ``K_b eps_w(P_bar)``. ``literal_strain``
    uses ``1 - sqrt(2/(A + 1))`` instead, the wall strain at ``P = s_w``
    without the gain ``K_b``, which is not an equilibrium of the strain equations.
    """
    if literal_strain:
        eps_b = 1 - math.sqrt(2 / (p.A + 1))
    else:
        eps_b = p.K_b * float(wall_strain(base.P_bar, p))
    full = np.array([eps_b, eps_b, T_p0, T_s0, base.H_bar])
    return full, full[[3, 4]].copy()


# ---------------------------------------------------------------------------
# compiled kernels
#
# The SBP input is a polynomial in x = (t - shift)/scale, evaluated by Horner's
# rule; constant pressure is the degree-0 case.

@njit(cache=True)
def _expit(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _strain(P, A, q_w, s_w):
    x = q_w * (P - s_w)
    if x >= 0:
        e = math.exp(-x)
        return 1.0 - math.sqrt((1.0 + e) / (A + e))
    e = math.exp(x)
    return 1.0 - math.sqrt((e + 1.0) / (A * e + 1.0))


@njit(cache=True)
def _surrogate(t, args, start):
    shift = args[start]
    scale = args[start + 1]
    ncoef = int(args[start + 2])
    x = (t - shift) / scale
    acc = 0.0
    for i in range(ncoef - 1, -1, -1):
        acc = acc * x + args[start + 3 + i]
    return acc


# reduced kernel argument layout
_R_TAU_S, _R_TAU_H, _R_HI, _R_HS, _R_FORCED = 0, 1, 2, 3, 4
_R_A, _R_KB, _R_QW, _R_SW, _R_QP, _R_SP, _R_QS, _R_SS, _R_KP, _R_KS, _R_HP = range(5, 16)
_R_TS, _R_TE, _R_PTH, _R_POLY = 16, 17, 18, 19


@rhs_kernel
def _reduced_kernel(t, x, xd, a):
    out = np.empty(2)
    f = 0.0
    g = 0.0
    if a[_R_FORCED] != 0.0:
        P = _surrogate(t, a, _R_POLY)
        if a[_R_TS] <= t <= a[_R_TE]:
            P -= a[_R_PTH]
        n = (1.0 - a[_R_KB]) * _strain(P, a[_R_A], a[_R_QW], a[_R_SW])
        G_p = _expit(a[_R_QP] * (n - a[_R_SP]))
        G_s = _expit(-a[_R_QS] * (n - a[_R_SS]))
        f = a[_R_KS] / a[_R_TAU_S] * G_s
        g = a[_R_HI] / a[_R_TAU_H] * (1.0 - a[_R_HP] * a[_R_KP] * G_p)
    out[0] = -xd[0] / a[_R_TAU_S] + f
    out[1] = -x[1] / a[_R_TAU_H] + a[_R_HI] * a[_R_HS] / a[_R_TAU_H] * x[0] + g
    return out


@jac_kernel
def _reduced_jac(t, x, xd, a):
    J = np.zeros((2, 2))
    J[1, 0] = a[_R_HI] * a[_R_HS] / a[_R_TAU_H]
    J[1, 1] = -1.0 / a[_R_TAU_H]
    return J


_F_NAMES = ("A", "B", "K_b", "K_p", "K_s", "tau_b", "tau_p", "tau_s", "tau_H", "q_w", "q_p",
            "q_s", "s_w", "s_p", "s_s", "H_I", "H_p", "H_s", "t_s", "t_e")
(_F_A, _F_B, _F_KB, _F_KP, _F_KS, _F_TAUB, _F_TAUP, _F_TAUS, _F_TAUH, _F_QW, _F_QP,
 _F_QS, _F_SW, _F_SP, _F_SS, _F_HI, _F_HP, _F_HS, _F_TS, _F_TE) = range(20)
_F_PTH, _F_POLY = 20, 21


@rhs_kernel
def _full_kernel(t, x, xd, a):
    out = np.empty(5)
    P_c = _surrogate(t, a, _F_POLY)
    P_a = P_c
    if a[_F_TS] <= t <= a[_F_TE]:
        P_a -= a[_F_PTH]
    e_wc = _strain(P_c, a[_F_A], a[_F_QW], a[_F_SW])
    e_wa = _strain(P_a, a[_F_A], a[_F_QW], a[_F_SW])
    B = a[_F_B]
    n = B * (e_wc - x[0]) + (1.0 - B) * (e_wa - x[1])
    G_p = _expit(a[_F_QP] * (n - a[_F_SP]))
    G_s = _expit(-a[_F_QS] * (n - a[_F_SS]))
    out[0] = (-x[0] + a[_F_KB] * e_wc) / a[_F_TAUB]
    out[1] = (-x[1] + a[_F_KB] * e_wa) / a[_F_TAUB]
    out[2] = (-x[2] + a[_F_KP] * G_p) / a[_F_TAUP]
    out[3] = (-xd[3] + a[_F_KS] * G_s) / a[_F_TAUS]
    out[4] = (-x[4] + a[_F_HI] * (1.0 - a[_F_HP] * x[2] + a[_F_HS] * x[3])) / a[_F_TAUH]
    return out


def _poly_block(surrogate) -> list:
    """``[shift, scale, ncoef, c0, c1, ...]`` for an object with ``poly_coeffs`` and ``t_map``."""
    coeffs = list(np.asarray(surrogate.poly_coeffs, dtype=float))
    return [float(surrogate.t_map["shift"]), float(surrogate.t_map["scale"]), float(len(coeffs)), *coeffs]


def _check_span(surrogate, span):
    if span is None or surrogate is None:
        return
    lo, hi = surrogate.span
    if span[0] < lo or span[1] > hi:
        raise ValueError(f"integration span {tuple(span)} leaves the forcing span [{lo}, {hi}]")


def _breakpoints(p: ParameterSet, thoracic: bool) -> tuple:
    return (p.t_s, p.t_e) if thoracic else ()


def reduced_system(p: ParameterSet, history, forcing=None, thoracic: bool = True,
                   span=None) -> DdeSystem:
    """Reduced ``[T_s, H]`` system ready for :func:`integrate`.

    Parameters
    ----------
    history : array_like, shape (2,)
        Constant ``[T_s, H]`` on ``[-D_s, 0]``.
    forcing : ForcingModel, optional
        Supplies the SBP surrogate; ``None`` gives the homogeneous system.
    span : (t0, tf), optional
        Checked against the forcing span.
    """
    _check_span(forcing, span)
    head = [p.tau_s, p.tau_H, p.H_I, p.H_s, 0.0 if forcing is None else 1.0,
            p.A, p.K_b, p.q_w, p.s_w, p.q_p, p.s_p, p.q_s, p.s_s, p.K_p, p.K_s, p.H_p,
            p.t_s, p.t_e, THORACIC_PRESSURE if thoracic else 0.0]
    poly = _poly_block(forcing) if forcing is not None else [0.0, 1.0, 1.0, 0.0]
    bps = _breakpoints(p, thoracic) if forcing is not None else ()
    return DdeSystem(_reduced_kernel, p.D_s, history, breakpoints=bps, jac=_reduced_jac,
                     names=REDUCED_STATE_NAMES, args=np.array(head + poly))


def full_system(p: ParameterSet, history, surrogate, thoracic: bool = True, span=None) -> DdeSystem:
    """Five-state system driven by the polynomial SBP ``surrogate`` (a ``ForcingModel``)."""
    _check_span(surrogate, span)
    head = [getattr(p, name) for name in _F_NAMES] + [THORACIC_PRESSURE if thoracic else 0.0]
    return DdeSystem(_full_kernel, p.D_s, history, breakpoints=_breakpoints(p, thoracic),
                     names=FULL_STATE_NAMES, args=np.array(head + _poly_block(surrogate)))


# ---------------------------------------------------------------------------
# parameter files

_ALIASES = {
    "τ_b": "tau_b", "τ_p": "tau_p", "τ_s": "tau_s", "τ_H": "tau_H",
    "P̄": "P_bar", "H̄": "H_bar",
}
_BASELINE_KEYS = ("P_bar", "H_bar", "age")


def _canonical(key: str) -> str:
    key = key.strip()
    return _ALIASES.get(key, key)


def read_parameter_file(path) -> dict:
    """Parse ``name = value`` lines (``#`` starts a comment) into a dict.

    Accepts every :class:`ParameterSet` field (Greek ``τ`` spellings too) and
    the baseline keys ``P_bar``, ``H_bar``, ``age``. Unknown or repeated keys
    and non-numeric values raise ``ValueError``.
    """
    allowed = set(ParameterSet.names()) | set(_BASELINE_KEYS)
    out = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"([^=\s]+)\s*=\s*(\S+)", line)
        if not m:
            raise ValueError(f"{path}:{lineno}: expected 'name = value'")
        key = _canonical(m.group(1))
        if key not in allowed:
            raise ValueError(f"{path}:{lineno}: unknown parameter {m.group(1)!r}")
        if key in out:
            raise ValueError(f"{path}:{lineno}: duplicate parameter {key!r}")
        try:
            out[key] = float(m.group(2))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric value {m.group(2)!r}") from None
    return out


def parameters_from_mapping(values: Mapping[str, float], base: Optional[SubjectBaseline] = None):
    """Build ``(ParameterSet, SubjectBaseline)`` from parsed file contents.

    Baseline keys override ``base`` (default the nominal subject); the other
    entries are passed to :func:`nominal_parameters`.
    """
    base = base or NOMINAL_BASELINE
    b = {k: values[k] for k in _BASELINE_KEYS if k in values}
    if b:
        base = dataclasses.replace(base, **b)
    rest = {k: v for k, v in values.items() if k not in _BASELINE_KEYS}
    t_s = rest.pop("t_s", 20.0)
    t_e = rest.pop("t_e", 35.0)
    return nominal_parameters(base, t_s=t_s, t_e=t_e, **rest), base


def write_parameter_file(path, p: ParameterSet, base: Optional[SubjectBaseline] = None) -> None:
    lines = []
    if base is not None:
        lines += [f"{k} = {getattr(base, k)!r}" for k in _BASELINE_KEYS]
    lines += [f"{k} = {v!r}" for k, v in p.as_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
