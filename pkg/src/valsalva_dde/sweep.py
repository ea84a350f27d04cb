"""Region maps over the (D_s, tau_s) plane.

Every grid cell integrates the reduced model with that delay and time scale,
classifies ``T_s`` and stores a :class:`RegionClass` code. Cells are
independent, so the grid is split by ``D_s`` column across worker processes
and reassembled by index; the result does not depend on the worker count.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from .analytic import RegionClass, classify_homogeneous
from .classifier import (
    T_CUT_AFTER_RELEASE,
    BehaviorClass,
    ClassifierConfig,
    classify_trajectory,
)
from .dde_core import DdeIntegrationError, SolverConfig, integrate
from .models import ParameterSet, forcing_terms, initial_state, reduced_system, thoracic_pressure

__all__ = [
    "GridSpec",
    "RegionMap",
    "SweepSettings",
    "SweepError",
    "HOMOGENEOUS",
    "NONHOMOGENEOUS",
    "run_sweep",
    "classify_cell",
    "forced_equilibrium",
    "analytic_map",
    "compare_maps",
    "monotone_columns",
    "refine_boundaries",
    "write_map_csv",
    "write_map_pgm",
    "read_map_csv",
]

HOMOGENEOUS = "homogeneous"
NONHOMOGENEOUS = "nonhomogeneous"
SWEEP_SOLVER = SolverConfig(rel_tol=1e-6, abs_tol=1e-8)
# linear homogeneous cells: relative control only, since the solution is scale free
HOMOGENEOUS_SOLVER = SolverConfig(rel_tol=1e-6, abs_tol=1e-20)

# order along decreasing tau_s at fixed D_s
_RANK = {
    RegionClass.OverdampedSink: 0,
    RegionClass.CriticallyDampedSink: 0,
    RegionClass.StableFocus: 1,
    RegionClass.LimitCycle: 2,
    RegionClass.Unstable: 3,
}
_SINKS = (RegionClass.OverdampedSink, RegionClass.CriticallyDampedSink)
_NON_DECAYING = (RegionClass.LimitCycle, RegionClass.Unstable)


class SweepError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid ``lo, lo + step, ...`` up to ``hi`` on both axes (s)."""

    d_range: tuple
    tau_range: tuple
    step: float

    def __post_init__(self):
        object.__setattr__(self, "d_range", tuple(float(v) for v in self.d_range))
        object.__setattr__(self, "tau_range", tuple(float(v) for v in self.tau_range))
        if not self.step > 0:
            raise ValueError("step must be positive")
        for lo, hi in (self.d_range, self.tau_range):
            if not lo >= self.step * (1 - 1e-12):
                raise ValueError("grid must start at or above one step")
            if not hi >= lo:
                raise ValueError("grid range must be increasing")

    @classmethod
    def square(cls, lo: float, hi: float, n: int) -> "GridSpec":
        """``n`` x ``n`` grid on ``[lo, hi]^2``."""
        if n < 1:
            raise ValueError("n must be positive")
        step = (hi - lo) / (n - 1) if n > 1 else lo
        return cls((lo, hi), (lo, hi), step)

    @staticmethod
    def _axis(lo, hi, step):
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return lo + step * np.arange(n)

    @property
    def d_values(self) -> np.ndarray:
        return self._axis(*self.d_range, self.step)

    @property
    def tau_values(self) -> np.ndarray:
        return self._axis(*self.tau_range, self.step)

    @property
    def shape(self) -> tuple:
        """``(n_tau, n_d)``: rows are tau_s, columns are D_s."""
        return len(self.tau_values), len(self.d_values)


@dataclass(frozen=True)
class SweepSettings:
    """Experiment definition shared by every cell.

    Homogeneous cells start from the constant ``history`` ``[T_s, H]`` before
    ``t = 0`` (the origin is the equilibrium, so it must be nonzero). Their
    analysis window ``[t_cut_delays, horizon_delays]`` and sampling step are
    measured in units of ``D_s``; since the linear delay equation is
    invariant under ``(t, D_s, tau_s) -> c*(t, D_s, tau_s)``, the class then
    depends on ``tau_s/D_s`` alone. They use ``homogeneous_solver``, with
    purely relative error control, and ``homogeneous_amp_floor`` so that
    strongly damped oscillations near critical damping stay visible.

    Forced cells run over the whole forcing span with ``solver`` and
    ``classifier``; ``t_cut`` is ``t_e + 2`` unless the classifier sets one.
    """

    horizon_delays: float = 120.0
    t_cut_delays: float = 10.0
    history: tuple = (1.0, 0.0)
    homogeneous_solver: SolverConfig = HOMOGENEOUS_SOLVER
    homogeneous_amp_floor: float = 1e-15
    solver: SolverConfig = SWEEP_SOLVER
    classifier: ClassifierConfig = ClassifierConfig()

    def __post_init__(self):
        if not self.t_cut_delays >= 0:
            raise ValueError("t_cut_delays must be non-negative")
        if not self.horizon_delays > self.t_cut_delays:
            raise ValueError("horizon_delays must exceed t_cut_delays")
        if not self.homogeneous_amp_floor > 0:
            raise ValueError("homogeneous_amp_floor must be positive")
        if not any(h != 0 for h in self.history):
            raise ValueError("homogeneous history must be a nonzero perturbation")

    def homogeneous_classifier(self, D_s: float) -> ClassifierConfig:
        return dataclasses.replace(self.classifier, t_cut=self.t_cut_delays * D_s,
                                   resample_dt=self.classifier.resample_dt * D_s,
                                   amp_floor=self.homogeneous_amp_floor)


@dataclass
class RegionMap:
    """Class codes ``classes[i_tau, j_d]`` plus per-cell failure flags."""

    grid: GridSpec
    classes: np.ndarray
    mode: str
    failed: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.int8)
        if self.classes.shape != self.grid.shape:
            raise ValueError(f"classes shape {self.classes.shape} does not match grid {self.grid.shape}")
        if self.failed is None:
            self.failed = np.zeros(self.grid.shape, dtype=bool)
        if np.any(self.classes < 0) or np.any(self.classes > max(RegionClass)):
            raise ValueError("unpopulated or invalid cell")

    def region(self, i_tau: int, j_d: int) -> RegionClass:
        return RegionClass(int(self.classes[i_tau, j_d]))


def _config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=repr).encode()
    return hashlib.sha256(blob).hexdigest()


def classify_cell(D_s: float, tau_s: float, p: ParameterSet, mode: str, fm=None,
                  settings: SweepSettings = SweepSettings()):
    """Integrate and classify one cell.

    Returns
    -------
    (RegionClass, failed: bool, BehaviorClass or None)
    """
    q = p.replace(D_s=float(D_s), tau_s=float(tau_s))
    if mode == HOMOGENEOUS:
        cfg = settings.homogeneous_classifier(q.D_s)
        hist = np.asarray(settings.history, dtype=float)
        system = reduced_system(q, hist)
        span = (0.0, settings.horizon_delays * q.D_s)
        solver = settings.homogeneous_solver
    elif mode == NONHOMOGENEOUS:
        if fm is None:
            raise ValueError("nonhomogeneous mode needs a ForcingModel")
        t_cut = settings.classifier.t_cut
        cfg = settings.classifier.with_t_cut(q.t_e + T_CUT_AFTER_RELEASE if t_cut is None else t_cut)
        hist = initial_state(q, fm.baseline)[1] if fm.baseline is not None else forced_equilibrium(q, fm)
        system = reduced_system(q, hist, fm.with_params(q))
        span = fm.span
        solver = settings.solver
    else:
        raise ValueError(f"unknown mode {mode!r}")
    abort = cfg.divergence_factor * max(1.0, float(np.max(np.abs(hist))))
    try:
        traj = integrate(system, span, solver, abort_norm=abort)
    except DdeIntegrationError as exc:
        partial = exc.partial
        growing = partial is not None and np.max(np.abs(partial.states[:, 0])) > 10 * max(1.0, abs(hist[0]))
        if growing or classify_homogeneous(q.D_s, q.tau_s) in _NON_DECAYING:
            return RegionClass.Unstable, True, None
        raise SweepError(f"integration failed at D_s={D_s}, tau_s={tau_s}: {exc}") from exc
    behavior = classify_trajectory(traj, 0, cfg).behavior
    region = behavior.region
    if mode == HOMOGENEOUS and behavior is BehaviorClass.Sink:
        if classify_homogeneous(q.D_s, q.tau_s) is RegionClass.CriticallyDampedSink:
            region = RegionClass.CriticallyDampedSink
    return region, False, behavior


def forced_equilibrium(q: ParameterSet, fm) -> np.ndarray:
    """Reduced-model rest state ``[T_s, H]`` for the forcing at the start of its span."""
    t0 = fm.span[0]
    f, g = forcing_terms(fm.sbp(t0) - thoracic_pressure(t0, q), q)
    T_s = q.tau_s * f
    return np.array([T_s, q.H_I * q.H_s * T_s + q.tau_H * g])


# worker state, installed once per process
_STATE = {}


def _init_worker(state):
    _STATE.clear()
    _STATE.update(state)


def _column(j: int):
    s = _STATE
    d = s["d_values"][j]
    out = np.empty(len(s["tau_values"]), dtype=np.int8)
    bad = np.zeros(len(s["tau_values"]), dtype=bool)
    for i, tau in enumerate(s["tau_values"]):
        region, failed, _ = classify_cell(d, tau, s["p"], s["mode"], s["fm"], s["settings"])
        out[i], bad[i] = int(region), failed
    return j, out, bad


def _warm_up(p: ParameterSet, mode, fm, settings):
    # compile in the parent so forked workers inherit the machine code
    if mode == HOMOGENEOUS:
        settings = dataclasses.replace(settings, horizon_delays=settings.t_cut_delays + 1.0)
    classify_cell(1.0, 2 * math.e, p, mode, fm, settings)


def run_sweep(grid: GridSpec, p: ParameterSet, mode: str = HOMOGENEOUS, fm=None,
              settings: SweepSettings = SweepSettings(), workers: int = 1) -> RegionMap:
    """Classify every ``(D_s, tau_s)`` cell of ``grid``; other parameters stay at ``p``.

    Parameters
    ----------
    mode : {"homogeneous", "nonhomogeneous"}
        Homogeneous cells start from ``settings.history`` with no forcing.
        Nonhomogeneous cells start at the resting state of ``fm.baseline`` and
        are driven by ``fm`` over its whole span.
    workers : int
        Process count; columns are distributed, results are identical for any value.

    Raises
    ------
    SweepError
        On an integration failure outside the non-decaying regime.
    """
    if mode not in (HOMOGENEOUS, NONHOMOGENEOUS):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == NONHOMOGENEOUS and fm is None:
        raise ValueError("nonhomogeneous mode needs a ForcingModel")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    state = {"d_values": grid.d_values, "tau_values": grid.tau_values, "p": p, "mode": mode,
             "fm": fm, "settings": settings}
    classes = np.full(grid.shape, -1, dtype=np.int8)
    failed = np.zeros(grid.shape, dtype=bool)
    _warm_up(p, mode, fm, settings)
    columns = range(grid.shape[1])
    if workers == 1:
        _init_worker(state)
        results = map(_column, columns)
        for j, col, bad in results:
            classes[:, j], failed[:, j] = col, bad
    else:
        ctx = multiprocessing.get_context("fork" if "fork" in multiprocessing.get_all_start_methods() else None)
        with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_init_worker, initargs=(state,)) as ex:
            for j, col, bad in ex.map(_column, columns, chunksize=max(1, grid.shape[1] // (8 * workers))):
                classes[:, j], failed[:, j] = col, bad
    prov_cfg = {
        "grid": dataclasses.asdict(grid),
        "params": p.as_dict(),
        "mode": mode,
        "settings": repr(settings),
        "forcing": None if fm is None else [list(fm.poly_coeffs), fm.t_map, list(fm.span)],
    }
    provenance = {"config_hash": _config_hash(prov_cfg),
                  "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    return RegionMap(grid, classes, mode, failed, provenance)


def analytic_map(grid: GridSpec, mode: str = HOMOGENEOUS) -> RegionMap:
    """Map filled from :func:`classify_homogeneous` alone."""
    classes = np.array([[int(classify_homogeneous(d, tau)) for d in grid.d_values] for tau in grid.tau_values])
    return RegionMap(grid, classes, mode, provenance={"source": "analytic"})


def _count(col_classes, members) -> int:
    return int(sum(int(c) in {int(m) for m in members} for c in col_classes))


def compare_maps(rmap: RegionMap) -> dict:
    """Per-column boundary deviation from the two analytic rays, in tau_s cells.

    For each ``D_s`` column the numeric sink region is compared with
    ``tau_s >= e*D_s`` by cell count, and the non-decaying region (limit
    cycle or unstable) with ``tau_s <= 2*D_s/pi``. A positive deviation means
    the numeric region is larger. Only columns where the ray crosses the
    column's tau_s range contribute; the rest are listed as uncovered, and
    the summary statistics are None when no column contributes.
    """
    taus, ds = rmap.grid.tau_values, rmap.grid.d_values
    report = {}
    rays = {
        "sink_focus": (_SINKS, lambda d: math.e * d),
        "focus_unstable": (_NON_DECAYING, lambda d: 2 * d / math.pi),
    }
    for name, (members, ray) in rays.items():
        devs, uncovered = [], []
        for j, d in enumerate(ds):
            if not taus[0] < ray(d) < taus[-1]:
                uncovered.append(float(d))
                devs.append(None)
                continue
            expected = _count([classify_homogeneous(d, tau) for tau in taus], members)
            devs.append(_count(rmap.classes[:, j], members) - expected)
        vals = np.array([v for v in devs if v is not None], dtype=float)
        summary = {"n_columns": int(vals.size), "mean_abs": None, "mean": None, "max_abs": None,
                   "fraction_within_1": None}
        if vals.size:
            summary.update(mean_abs=float(np.mean(np.abs(vals))), mean=float(np.mean(vals)),
                           max_abs=float(np.max(np.abs(vals))),
                           fraction_within_1=float(np.mean(np.abs(vals) <= 1)))
        report[name] = {"deviation": devs, "summary": summary, "uncovered_d": uncovered}
    return report


def monotone_columns(rmap: RegionMap) -> np.ndarray:
    """True for columns whose classes never step back through sink, focus, limit cycle, unstable as tau_s decreases."""
    rank = np.vectorize(lambda c: _RANK[RegionClass(int(c))])(rmap.classes)
    # rows are increasing tau_s, so rank must be non-increasing down the rows
    return np.all(np.diff(rank, axis=0) <= 0, axis=0)


def refine_boundaries(rmap: RegionMap, p: ParameterSet, fm=None, settings: SweepSettings = SweepSettings(),
                      factor: int = 10, band: int = 3, columns=None) -> dict:
    """Re-evaluate a band of cells around each transition at ``factor`` times finer tau_s spacing.

    Returns ``{D_s: {"sink_focus": tau, "focus_unstable": tau}}`` with the
    refined transition (midpoint of the last pair of differing fine cells),
    or None where the coarse column has no such transition.
    """
    taus = rmap.grid.tau_values
    h = rmap.grid.step
    cols = range(rmap.grid.shape[1]) if columns is None else columns
    out = {}
    for j in cols:
        d = float(rmap.grid.d_values[j])
        entry = {}
        for name, members in (("sink_focus", _SINKS), ("focus_unstable", _NON_DECAYING)):
            inside = np.isin(rmap.classes[:, j], [int(m) for m in members])
            edges = np.flatnonzero(np.diff(inside.astype(int)) != 0)
            if edges.size == 0:
                entry[name] = None
                continue
            k = edges[0] if name == "sink_focus" else edges[-1]
            lo = max(taus[0], taus[k] - band * h)
            hi = min(taus[-1], taus[k + 1] + band * h)
            fine = np.linspace(lo, hi, int(round((hi - lo) / h * factor)) + 1)
            flags = [classify_cell(d, t, p, rmap.mode, fm, settings)[0] in members for t in fine]
            change = np.flatnonzero(np.diff(np.asarray(flags, dtype=int)) != 0)
            entry[name] = float(0.5 * (fine[change[0]] + fine[change[0] + 1])) if change.size else None
        out[d] = entry
    return out


def write_map_csv(rmap: RegionMap, path) -> None:
    """``D_s,tau_s,class_code`` rows, D_s-major."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["D_s", "tau_s", "class_code"])
        for j, d in enumerate(rmap.grid.d_values):
            for i, tau in enumerate(rmap.grid.tau_values):
                w.writerow([f"{d:.10g}", f"{tau:.10g}", int(rmap.classes[i, j])])


def read_map_csv(path, grid: GridSpec, mode: str = HOMOGENEOUS) -> RegionMap:
    classes = np.full(grid.shape, -1, dtype=np.int8)
    ds, taus = grid.d_values, grid.tau_values
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["D_s", "tau_s", "class_code"]:
        raise ValueError("expected header D_s,tau_s,class_code")
    for row in rows[1:]:
        d, tau, code = float(row[0]), float(row[1]), int(row[2])
        j = int(round((d - ds[0]) / grid.step))
        i = int(round((tau - taus[0]) / grid.step))
        classes[i, j] = code
    return RegionMap(grid, classes, mode)


def write_map_pgm(rmap: RegionMap, path) -> None:
    """Plain (P2) graymap, one pixel per cell, D_s to the right and tau_s upward; gray = code*255//4."""
    n_tau, n_d = rmap.grid.shape
    lines = ["P2", f"{n_d} {n_tau}", "255"]
    for i in range(n_tau - 1, -1, -1):
        lines.append(" ".join(str(int(c) * 255 // max(RegionClass)) for c in rmap.classes[i]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
