"""Pressure data to forcing functions.

Raw pulsatile pressure is reduced to systolic pressure (SBP) by interpolating
beat maxima, smoothed with a one-second moving mean, padded with constant
baseline before and after the maneuver, and replaced by a degree-10
polynomial. The polynomial drives the reduced model through ``f(t)`` and
``g(t)`` and the full model directly.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .models import (
    ParameterSet,
    SubjectBaseline,
    forcing_terms,
    nominal_parameters,
    thoracic_pressure,
)

__all__ = [
    "PressureSeries",
    "ForcingModel",
    "VmProfile",
    "SignalError",
    "ExtrapolationError",
    "POLY_DEGREE",
    "extract_sbp",
    "moving_mean",
    "fit_polynomial",
    "extend_baseline",
    "forcing_f",
    "forcing_g",
    "synth_vm",
    "synth_pulsatile",
    "build_forcing",
    "constant_forcing",
    "read_pressure_csv",
    "write_pressure_csv",
    "write_forcing_trace",
    "forcing_to_json",
    "forcing_from_json",
]

POLY_DEGREE = 10
MIN_PEAK_SEPARATION = 0.25  # s, i.e. at most 240 beats per minute
SPAN_SLACK = 1e-9


class SignalError(ValueError):
    pass


class ExtrapolationError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PressureSeries:
    """Samples ``P`` (mmHg) at strictly increasing times ``t`` (s)."""

    t: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        t, P = _frozen(self.t).ravel(), _frozen(self.P).ravel()
        if t.shape != P.shape:
            raise SignalError("t and P differ in length")
        if t.size == 0:
            raise SignalError("empty series")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(P))):
            raise SignalError("non-finite sample")
        if np.any(np.diff(t) <= 0):
            raise SignalError("t must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "P", P)

    def __len__(self):
        return self.t.size

    @property
    def span(self) -> tuple:
        return float(self.t[0]), float(self.t[-1])


def extract_sbp(raw: PressureSeries, min_separation: float = MIN_PEAK_SEPARATION) -> PressureSeries:
    """Systolic envelope: linear interpolation of beat maxima on the raw time grid.

    A beat maximum is a strict local maximum over three samples. When two lie
    closer than ``min_separation`` the lower one is discarded, taller peaks
    claiming their neighborhood first. Outside the first and last maxima the
    envelope is held constant.
    """
    P = raw.P
    if P.size < 3:
        raise SignalError("need at least three samples")
    idx = np.flatnonzero((P[1:-1] > P[:-2]) & (P[1:-1] > P[2:])) + 1
    keep = np.zeros(idx.size, dtype=bool)
    taken = []
    for j in np.argsort(-P[idx], kind="stable"):
        tj = raw.t[idx[j]]
        if all(abs(tj - tk) >= min_separation for tk in taken):
            keep[j] = True
            taken.append(tj)
    idx = idx[keep]
    if idx.size < 2:
        raise SignalError(f"found {idx.size} beat maxima, need at least 2")
    return PressureSeries(raw.t, np.interp(raw.t, raw.t[idx], P[idx]))


def moving_mean(s: PressureSeries, window: float = 1.0) -> PressureSeries:
    """Centered moving average over ``[t - window/2, t + window/2]``.

    Near the ends the window is clipped to the record, so it holds fewer
    samples; a window longer than the record gives the global mean everywhere.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    csum = np.concatenate([[0.0], np.cumsum(s.P)])
    lo = np.searchsorted(s.t, s.t - window / 2, side="left")
    hi = np.searchsorted(s.t, s.t + window / 2, side="right")
    return PressureSeries(s.t, (csum[hi] - csum[lo]) / (hi - lo))


def fit_polynomial(s: PressureSeries, degree: int = POLY_DEGREE):
    """Least-squares polynomial in ``x = (t - shift)/scale``, which maps the record onto [-1, 1].

    Returns
    -------
    coeffs : ndarray, shape (degree + 1,)
        Ascending powers of ``x``.
    t_map : dict
        ``{"shift": ..., "scale": ...}``.

    Raises
    ------
    SignalError
        If the design matrix has rank below ``degree + 1``.
    """
    if len(s) < degree + 1:
        raise SignalError(f"need at least {degree + 1} samples for degree {degree}")
    t0, t1 = s.span
    shift, scale = 0.5 * (t0 + t1), 0.5 * (t1 - t0)
    x = (s.t - shift) / scale
    V = np.vander(x, degree + 1, increasing=True)
    coeffs, _, rank, _ = np.linalg.lstsq(V, s.P, rcond=None)
    if rank < degree + 1:
        raise SignalError(f"rank-deficient fit (rank {rank} < {degree + 1})")
    return coeffs, {"shift": float(shift), "scale": float(scale)}


def _spacing(s: PressureSeries) -> float:
    return float(np.median(np.diff(s.t))) if len(s) > 1 else 1.0


def extend_baseline(s: PressureSeries, pre: float, post: float) -> PressureSeries:
    """Pad with the first value for ``pre`` seconds and the last value for ``post`` seconds.

    Padding uses the median sample spacing, adjusted so the new record starts
    exactly ``pre`` seconds earlier and ends exactly ``post`` seconds later.
    """
    if pre < 0 or post < 0:
        raise ValueError("pre and post must be non-negative")
    dt = _spacing(s)
    t0, t1 = s.span
    parts_t, parts_P = [], []
    if pre > 0:
        n = max(1, round(pre / dt))
        parts_t.append(t0 - pre + pre / n * np.arange(n))
        parts_P.append(np.full(n, s.P[0]))
    parts_t.append(s.t)
    parts_P.append(s.P)
    if post > 0:
        n = max(1, round(post / dt))
        parts_t.append(t1 + post / n * np.arange(1, n + 1))
        parts_P.append(np.full(n, s.P[-1]))
    return PressureSeries(np.concatenate(parts_t), np.concatenate(parts_P))


@dataclass(frozen=True)
class ForcingModel:
    """Polynomial SBP surrogate together with the parameters that turn it into forcing.

    ``span`` is the validity window; evaluating outside it raises
    :class:`ExtrapolationError`.
    """

    poly_coeffs: tuple
    t_map: dict
    span: tuple
    params: ParameterSet
    baseline: Optional[SubjectBaseline] = None
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        coeffs = tuple(float(c) for c in np.asarray(self.poly_coeffs, dtype=float).ravel())
        if len(coeffs) != POLY_DEGREE + 1:
            raise SignalError(f"expected {POLY_DEGREE + 1} coefficients, got {len(coeffs)}")
        object.__setattr__(self, "poly_coeffs", coeffs)
        t_map = {"shift": float(self.t_map["shift"]), "scale": float(self.t_map["scale"])}
        if not t_map["scale"] > 0:
            raise SignalError("t_map scale must be positive")
        object.__setattr__(self, "t_map", t_map)
        span = (float(self.span[0]), float(self.span[1]))
        if not span[1] > span[0]:
            raise SignalError("empty span")
        object.__setattr__(self, "span", span)
        grid = np.linspace(*span, 2001)
        if np.min(self._poly(grid)) <= 0:
            warnings.warn("SBP surrogate is not positive on its span", RuntimeWarning, stacklevel=2)

    def _poly(self, t):
        x = (np.asarray(t, dtype=float) - self.t_map["shift"]) / self.t_map["scale"]
        return np.polynomial.polynomial.polyval(x, self.poly_coeffs)

    def sbp(self, t):
        """Surrogate systolic pressure (mmHg)."""
        t = np.asarray(t, dtype=float)
        lo, hi = self.span
        slack = SPAN_SLACK * max(1.0, abs(lo), abs(hi))
        if np.any(t < lo - slack) or np.any(t > hi + slack):
            raise ExtrapolationError(f"t outside forcing span [{lo}, {hi}]")
        out = self._poly(t)
        return out[()] if np.ndim(out) == 0 else out

    def with_params(self, params: ParameterSet) -> "ForcingModel":
        return ForcingModel(self.poly_coeffs, self.t_map, self.span, params, self.baseline, self.notes)


def forcing_f(t, fm: ForcingModel):
    """``(K_s/tau_s) G_s(n(P_a(t)))`` with ``P_a`` the surrogate minus thoracic pressure (1/s)."""
    return forcing_terms(fm.sbp(t) - thoracic_pressure(t, fm.params), fm.params)[0]


def forcing_g(t, fm: ForcingModel):
    """``(H_I/tau_H)(1 - H_p K_p G_p(n(P_a(t))))`` (bpm/s)."""
    return forcing_terms(fm.sbp(t) - thoracic_pressure(t, fm.params), fm.params)[1]


@dataclass(frozen=True)
class VmProfile:
    """Departures from baseline SBP (mmHg) for each maneuver phase.

    ``rise``: phase-I increase at strain onset; ``drop``: phase-II trough,
    which recovers partly before release; ``dip``: phase-III fall at
    release; ``overshoot``: phase-IV rise.
    """

    rise: float = 5.0
    drop: float = 20.0
    dip: float = 2.0
    overshoot: float = 12.0


def _bump(t, center, half_width):
    """``cos^2`` bump on ``[center - half_width, center + half_width]``; C1 with compact support."""
    u = np.clip((t - center) / half_width, -1.0, 1.0)
    return np.cos(0.5 * math.pi * u) ** 2


def _vm_shape(t, t_s, t_e, prof: VmProfile):
    # Features are broad on purpose: a degree-10 polynomial over the padded
    # record cannot follow anything much narrower.
    L = t_e - t_s
    return (prof.rise * _bump(t, t_s + 2.5, 2.5)
            - prof.drop * _bump(t, t_s + 0.4 * L, L)
            - prof.dip * _bump(t, t_e + 1.5, 1.5)
            + prof.overshoot * _bump(t, t_e + 10.0, 10.0))


def synth_vm(base: SubjectBaseline, t_s: float = 20.0, t_e: float = 35.0,
             amplitudes: VmProfile = VmProfile(), duration: Optional[float] = None,
             dt: float = 0.01) -> PressureSeries:
    """Synthetic SBP record of a Valsalva maneuver starting at ``t = 0``.

    Baseline ``P_bar`` outside the maneuver and smooth (C1) phase features
    in between. Pressure is back at baseline exactly by
    ``max(t_e + 20, t_s + 1.4 (t_e - t_s))``. ``duration`` defaults to
    ``t_e + 45``.
    """
    if not t_e > t_s:
        raise ValueError("t_e must exceed t_s")
    duration = t_e + 45.0 if duration is None else duration
    t = np.arange(0.0, duration + 0.5 * dt, dt)
    return PressureSeries(t, base.P_bar + _vm_shape(t, t_s, t_e, amplitudes))


def synth_pulsatile(sbp: PressureSeries, heart_rate: float = 72.0, pulse: float = 40.0) -> PressureSeries:
    """Pulsatile pressure whose beat maxima sit on the given SBP envelope.

    Each beat is ``SBP(t) - pulse*(1 - cos^2(pi*phase))``, peaking at phase 0.
    """
    phase = sbp.t * heart_rate / 60.0
    return PressureSeries(sbp.t, sbp.P - pulse * np.sin(math.pi * phase) ** 2)


def build_forcing(record: PressureSeries, params: ParameterSet, base: Optional[SubjectBaseline] = None,
                  pre: float = 30.0, post: float = 60.0, window: float = 1.0,
                  pulsatile: bool = True) -> ForcingModel:
    """Record to ForcingModel: extract SBP (if ``pulsatile``), smooth, extend, fit.

    The forcing span is the extended record; ``params.t_s`` and ``params.t_e``
    are on the record's clock.
    """
    s = extract_sbp(record) if pulsatile else record
    s = extend_baseline(moving_mean(s, window), pre, post)
    coeffs, t_map = fit_polynomial(s)
    fitted = np.polynomial.polynomial.polyval((s.t - t_map["shift"]) / t_map["scale"], coeffs)
    notes = {"max_residual": float(np.max(np.abs(fitted - s.P))), "pre": pre, "post": post, "window": window}
    return ForcingModel(coeffs, t_map, s.span, params, base, notes)


def constant_forcing(P: float, params: ParameterSet, span: tuple,
                     base: Optional[SubjectBaseline] = None) -> ForcingModel:
    """Surrogate identically equal to ``P`` on ``span``."""
    coeffs = np.zeros(POLY_DEGREE + 1)
    coeffs[0] = P
    return ForcingModel(coeffs, {"shift": 0.5 * (span[0] + span[1]), "scale": 0.5 * (span[1] - span[0])},
                        span, params, base)


# ---------------------------------------------------------------------------
# files

def read_pressure_csv(path) -> PressureSeries:
    """Two-column ``t,P`` CSV, header optional."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise SignalError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header
                raise SignalError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise SignalError(f"{path}: no data")
    a = np.array(rows)
    return PressureSeries(a[:, 0], a[:, 1])


def write_pressure_csv(s: PressureSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "P"])
        for t, P in zip(s.t, s.P):
            w.writerow([repr(float(t)), repr(float(P))])


def write_forcing_trace(fm: ForcingModel, path, t=None) -> None:
    """CSV ``t,sbp,f,g`` on ``t`` (default: 0.1 s grid over the span)."""
    t = np.arange(fm.span[0], fm.span[1], 0.1) if t is None else np.asarray(t, dtype=float)
    sbp, f, g = fm.sbp(t), forcing_f(t, fm), forcing_g(t, fm)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "sbp", "f", "g"])
        for row in zip(t, sbp, f, g):
            w.writerow([repr(float(v)) for v in row])


def forcing_to_json(fm: ForcingModel) -> dict:
    out = {
        "coeffs": list(fm.poly_coeffs),
        "t_map": dict(fm.t_map),
        "span": list(fm.span),
        "params": fm.params.as_dict(),
    }
    if fm.baseline is not None:
        out["baseline"] = {"P_bar": fm.baseline.P_bar, "H_bar": fm.baseline.H_bar, "age": fm.baseline.age}
    if fm.notes:
        out["notes"] = dict(fm.notes)
    return out


def forcing_from_json(data, params: Optional[ParameterSet] = None) -> ForcingModel:
    """Inverse of :func:`forcing_to_json`; ``data`` is a dict or a path.

    ``params`` overrides the stored parameters; when neither is present the
    nominal set for the stored baseline is used.
    """
    if not isinstance(data, dict):
        data = json.loads(Path(data).read_text(encoding="utf-8"))
    try:
        coeffs, t_map, span = data["coeffs"], data["t_map"], data["span"]
        base = SubjectBaseline(**data["baseline"]) if "baseline" in data else None
        if params is None:
            params = ParameterSet(**data["params"]) if "params" in data else nominal_parameters(
                base or SubjectBaseline(120.0, 80.0, 30.0))
        return ForcingModel(coeffs, t_map, span, params, base, data.get("notes", {}))
    except (KeyError, TypeError) as exc:
        raise SignalError(f"malformed forcing model: {exc}") from None
