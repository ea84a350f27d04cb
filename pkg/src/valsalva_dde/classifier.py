"""Numerical behavior classification of a sympathetic-tone trajectory.

After the maneuver the local extrema of ``T_s`` are located from sign changes
of its gradient, paired into peak-to-trough amplitudes, and the amplitude
sequence is regressed on the oscillation index. No amplitudes means a sink,
a flat well-fitted trend a limit cycle, a steep rise an outward spiral and
anything else an inward spiral.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .analytic import RegionClass
from .dde_core import Trajectory, dense_eval

__all__ = [
    "BehaviorClass",
    "ClassifierConfig",
    "Classification",
    "WindowError",
    "T_CUT_AFTER_RELEASE",
    "find_extrema",
    "amplitude_regression",
    "classify_trajectory",
]

T_CUT_AFTER_RELEASE = 2.0  # s after t_e, roughly the end of phase III
BISECTION_TOL = 1e-6


class WindowError(ValueError):
    pass


class BehaviorClass(enum.Enum):
    Sink = "Sink"
    SpiralIn = "SpiralIn"
    LimitCycle = "LimitCycle"
    SpiralOut = "SpiralOut"

    @property
    def region(self) -> RegionClass:
        """Map code; a numeric sink is reported as the generic (overdamped) sink."""
        return _REGION[self]


_REGION = {
    BehaviorClass.Sink: RegionClass.OverdampedSink,
    BehaviorClass.SpiralIn: RegionClass.StableFocus,
    BehaviorClass.LimitCycle: RegionClass.LimitCycle,
    BehaviorClass.SpiralOut: RegionClass.Unstable,
}


@dataclass(frozen=True)
class ClassifierConfig:
    """Thresholds and sampling for :func:`classify_trajectory`.

    Parameters
    ----------
    eta1, eta2 : float
        Upper and lower slope thresholds (amplitude units per oscillation).
    mu : float
        ``r^2`` threshold for a limit cycle.
    min_extrema_sep : float
        Extrema closer than this (s) to the previous one are dropped.
    amp_floor : float
        Max/min pairs closer than this are dropped.
    resample_dt : float
        Uniform sampling step (s) for the gradient.
    t_cut : float or None
        Start of the analysis window; None uses the trajectory start.
    flat_rtol : float
        Amplitude sequences whose spread is within ``flat_rtol`` of their
        largest magnitude count as constant, giving ``r^2 = 1``.
    normalize : bool
        Divide amplitudes by the first one before the regression.
    divergence_factor : float
        ``|T_s|`` beyond this multiple of its initial magnitude is divergence.
    """

    eta1: float = 0.5
    eta2: float = -1e-2
    mu: float = 0.8
    min_extrema_sep: float = 0.1
    amp_floor: float = 1e-8
    resample_dt: float = 0.01
    t_cut: Optional[float] = None
    flat_rtol: float = 1e-4
    normalize: bool = False
    divergence_factor: float = 1e6

    def __post_init__(self):
        if not self.eta2 < 0 < self.eta1:
            raise ValueError("need eta2 < 0 < eta1")
        if not 0 < self.mu < 1:
            raise ValueError("mu must lie in (0, 1)")
        for name in ("min_extrema_sep", "amp_floor", "resample_dt", "divergence_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.flat_rtol >= 0:
            raise ValueError("flat_rtol must be non-negative")

    def with_t_cut(self, t_cut: Optional[float]) -> "ClassifierConfig":
        return replace(self, t_cut=t_cut)


@dataclass(frozen=True)
class Classification:
    behavior: BehaviorClass
    maxima: np.ndarray = field(repr=False)
    minima: np.ndarray = field(repr=False)
    amplitudes: np.ndarray = field(repr=False)
    slope: float = math.nan
    intercept: float = math.nan
    r2: float = math.nan
    diverged: bool = False

    @property
    def n_extrema(self) -> int:
        return len(self.maxima) + len(self.minima)

    def as_dict(self) -> dict:
        def num(v):
            return None if not math.isfinite(v) else float(v)

        return {
            "class": self.behavior.value,
            "n_extrema": self.n_extrema,
            "amplitudes": [float(a) for a in self.amplitudes],
            "slope": num(self.slope),
            "r2": num(self.r2),
            "diverged": self.diverged,
        }


def _window(traj: Trajectory, cfg: ClassifierConfig):
    t_cut = traj.t0 if cfg.t_cut is None else float(cfg.t_cut)
    if t_cut < traj.t0:
        raise WindowError(f"t_cut = {t_cut} precedes the trajectory start {traj.t0}")
    if not traj.tf - t_cut > 2 * cfg.resample_dt:
        raise WindowError(f"trajectory ends at {traj.tf}, before t_cut = {t_cut}")
    return t_cut, traj.tf


def find_extrema(traj: Trajectory, component: int = 0, cfg: ClassifierConfig = ClassifierConfig()):
    """Local extrema of one component after ``cfg.t_cut``.

    The dense output is sampled every ``resample_dt`` from ``t_cut``; the
    central-difference gradient on that grid is scanned for sign changes, and
    each bracket is refined by bisection on the same central difference to
    ``1e-6`` s. Extrema closer than ``min_extrema_sep`` to the previously kept
    one are dropped.

    Returns
    -------
    maxima, minima : ndarray, shape (k, 2)
        Rows ``(t, value)`` in time order.
    """
    t_lo, t_hi = _window(traj, cfg)
    h = cfg.resample_dt
    n = int(math.floor((t_hi - t_lo) / h + 1e-9))
    grid = np.minimum(t_lo + h * np.arange(n + 1), t_hi)
    x = dense_eval(traj, grid)[:, component]
    g = (x[2:] - x[:-2]) / (2 * h)  # gradient at grid[1:-1]
    tg = grid[1:-1]
    down = (g[:-1] > 0) & (g[1:] <= 0)
    up = (g[:-1] < 0) & (g[1:] >= 0)
    k = np.flatnonzero(down | up)
    is_max = down[k]
    a, b = tg[k], tg[k + 1]
    ga = g[k]

    def grad(t):
        lo = np.maximum(t - h, t_lo)
        hi = np.minimum(t + h, t_hi)
        v = dense_eval(traj, np.concatenate([lo, hi]))[:, component]
        return (v[len(t):] - v[:len(t)]) / (hi - lo)

    while k.size and np.max(b - a) > BISECTION_TOL:
        mid = 0.5 * (a + b)
        gm = grad(mid)
        same = np.sign(gm) == np.sign(ga)
        a = np.where(same, mid, a)
        ga = np.where(same, gm, ga)
        b = np.where(same, b, mid)
    t_ext = 0.5 * (a + b)
    v_ext = dense_eval(traj, t_ext)[:, component] if k.size else np.empty(0)

    keep = np.zeros(k.size, dtype=bool)
    last = -math.inf
    for i, t in enumerate(t_ext):
        if t - last >= cfg.min_extrema_sep:
            keep[i] = True
            last = t
    rows = np.column_stack([t_ext, v_ext])[keep]
    is_max = is_max[keep]
    return rows[is_max], rows[~is_max]


def amplitude_regression(amplitudes, flat_rtol: float = 0.0):
    """Least-squares line ``a = b0 + b1*i`` over the 1-based index ``i``.

    Returns
    -------
    (b0, b1, r2)
        ``r2 = 1 - SS_res/SS_tot``, taken as 1 when the amplitudes are
        constant (to within ``flat_rtol`` of their largest magnitude).
    """
    a = np.asarray(amplitudes, dtype=float)
    if a.size < 2:
        raise ValueError("need at least two amplitudes")
    i = np.arange(1, a.size + 1, dtype=float)
    di = i - i.mean()
    da = a - a.mean()
    b1 = float(di @ da / (di @ di))
    b0 = float(a.mean() - b1 * i.mean())
    ss_tot = float(da @ da)
    spread = float(np.max(a) - np.min(a))
    if ss_tot == 0 or spread <= flat_rtol * float(np.max(np.abs(a))):
        return b0, b1, 1.0
    res = a - (b0 + b1 * i)
    return b0, b1, 1.0 - float(res @ res) / ss_tot


def _diverged(traj: Trajectory, component: int, cfg: ClassifierConfig) -> bool:
    v = traj.states[:, component]
    if not np.all(np.isfinite(v)) or not traj.completed:
        return True
    scale = abs(v[0]) if v[0] != 0 else 1.0
    return bool(np.max(np.abs(v)) > cfg.divergence_factor * scale)


def classify_trajectory(traj: Trajectory, component: int = 0,
                        cfg: ClassifierConfig = ClassifierConfig()) -> Classification:
    """Sink, inward spiral, limit cycle or outward spiral for one component.

    Two amplitudes leave the regression without residual degrees of freedom;
    they give a limit cycle when not decreasing and an inward spiral otherwise,
    unless the slope exceeds ``eta1``.

    A trajectory that stopped early (``completed`` False), went non-finite or
    grew past ``divergence_factor`` times its initial magnitude is an outward
    spiral without further analysis.

    Raises
    ------
    WindowError
        If the trajectory does not extend past ``cfg.t_cut``.
    """
    empty = np.empty((0, 2))
    if _diverged(traj, component, cfg):
        return Classification(BehaviorClass.SpiralOut, empty, empty, np.empty(0), diverged=True)
    maxima, minima = find_extrema(traj, component, cfg)
    n = min(len(maxima), len(minima))
    amp = maxima[:n, 1] - minima[:n, 1]
    amp = amp[np.abs(amp) >= cfg.amp_floor]
    if amp.size == 0:
        return Classification(BehaviorClass.Sink, maxima, minima, amp)
    if amp.size == 1:
        return Classification(BehaviorClass.SpiralIn, maxima, minima, amp)
    y = amp / amp[0] if cfg.normalize else amp
    b0, b1, r2 = amplitude_regression(y, cfg.flat_rtol)
    if b1 > cfg.eta1:
        cls = BehaviorClass.SpiralOut
    elif amp.size == 2:
        # a line through two points always has r^2 = 1, so only the trend counts
        r2 = math.nan
        cls = BehaviorClass.LimitCycle if b1 >= 0 else BehaviorClass.SpiralIn
    elif cfg.eta2 <= b1 and r2 > cfg.mu:
        cls = BehaviorClass.LimitCycle
    else:
        cls = BehaviorClass.SpiralIn
    return Classification(cls, maxima, minima, amp, slope=b1, intercept=b0, r2=r2)
