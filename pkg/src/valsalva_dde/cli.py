"""Command-line entry point: ``valsalva-dde {ingest,simulate,classify,sweep,analyze}``.

Exit status is 0 on success, 1 on a numerical failure and 2 on bad input.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .analytic import ConsistencyError, boundary_taus, classify_homogeneous, principal_root
from .classifier import ClassifierConfig, WindowError, classify_trajectory
from .dde_core import DdeIntegrationError, SolverConfig, integrate, read_trajectory_csv, write_trajectory_csv
from .models import (
    NOMINAL_BASELINE,
    SUBJECTS,
    ParameterDerivationError,
    full_system,
    initial_state,
    nominal_parameters,
    parameters_from_mapping,
    read_parameter_file,
    reduced_system,
)
from .signal import (
    ForcingModel,
    SignalError,
    build_forcing,
    forcing_from_json,
    forcing_to_json,
    read_pressure_csv,
    synth_pulsatile,
    synth_vm,
    write_forcing_trace,
    write_pressure_csv,
)
from .sweep import (
    HOMOGENEOUS,
    NONHOMOGENEOUS,
    GridSpec,
    SweepError,
    SweepSettings,
    compare_maps,
    monotone_columns,
    run_sweep,
    write_map_csv,
    write_map_pgm,
)

EXIT_OK, EXIT_NUMERICAL, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# shared helpers

def _load_params(args):
    """``(ParameterSet, SubjectBaseline)`` from ``--subject`` and ``--params``."""
    base = SUBJECTS[args.subject] if getattr(args, "subject", None) else NOMINAL_BASELINE
    if getattr(args, "params", None):
        return parameters_from_mapping(read_parameter_file(args.params), base)
    return nominal_parameters(base), base


def _forcing(args, p, base):
    """ForcingModel from ``--forcing``, ``--data`` or the synthetic maneuver (default)."""
    if getattr(args, "forcing", None):
        fm = forcing_from_json(args.forcing, p)
        if fm.baseline is None:
            fm = ForcingModel(fm.poly_coeffs, fm.t_map, fm.span, p, base, fm.notes)
        return fm, None
    if getattr(args, "data", None):
        record = read_pressure_csv(args.data)
        pulsatile = not args.sbp
    else:
        record = synth_pulsatile(synth_vm(base, p.t_s, p.t_e))
        pulsatile = True
    fm = build_forcing(record, p, base, pre=args.pre, post=args.post, window=args.window, pulsatile=pulsatile)
    return fm, record


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _parse_axis(text: str):
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise InputError(f"axis {text!r} is not lo:hi:step") from None
    return lo, hi, step


def parse_grid(text: str) -> GridSpec:
    """``"lo:hi:step x lo:hi:step"`` (D_s axis first) to a :class:`GridSpec`."""
    parts = text.lower().replace(" ", "").split("x")
    if len(parts) != 2:
        raise InputError(f"grid {text!r} is not 'lo:hi:step x lo:hi:step'")
    (d_lo, d_hi, d_step), (t_lo, t_hi, t_step) = (_parse_axis(p) for p in parts)
    if not math.isclose(d_step, t_step, rel_tol=1e-12):
        raise InputError("both grid axes must use the same step")
    try:
        return GridSpec((d_lo, d_hi), (t_lo, t_hi), d_step)
    except ValueError as exc:
        raise InputError(str(exc)) from None


# ---------------------------------------------------------------------------
# subcommands

def cmd_ingest(args) -> int:
    p, base = _load_params(args)
    fm, record = _forcing(args, p, base)
    out = _out_dir(args.out)
    (out / "forcing.json").write_text(json.dumps(forcing_to_json(fm), indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    write_forcing_trace(fm, out / "forcing_trace.csv")
    if record is not None and not args.data:
        write_pressure_csv(record, out / "record.csv")
    _emit({"span": list(fm.span), "max_residual": fm.notes.get("max_residual"),
           "forcing": str(out / "forcing.json")})
    return EXIT_OK


def cmd_simulate(args) -> int:
    p, base = _load_params(args)
    fm, _ = _forcing(args, p, base)
    full0, reduced0 = initial_state(p, fm.baseline or base)
    thoracic = not args.no_thoracic
    if args.model == "full":
        system = full_system(p, full0, fm, thoracic=thoracic)
    else:
        system = reduced_system(p, reduced0, fm, thoracic=thoracic)
    traj = integrate(system, fm.span, SolverConfig(rel_tol=args.rtol, abs_tol=args.atol))
    if not traj.completed:
        raise DdeIntegrationError("integration stopped early", traj.tf, "incomplete")
    out = _out_dir(args.out)
    n = int(math.floor((traj.tf - traj.t0) / args.dt + 1e-9))
    grid = np.minimum(traj.t0 + args.dt * np.arange(n + 1), traj.tf)
    write_trajectory_csv(traj, out / "trajectory.csv", t=grid)
    write_forcing_trace(fm, out / "forcing_trace.csv")
    H = traj.states[:, traj.component("H")]
    _emit({"model": args.model, "span": list(fm.span), "steps": traj.stats.get("n_steps"),
           "H_min": float(H.min()), "H_max": float(H.max()), "trajectory": str(out / "trajectory.csv")})
    return EXIT_OK


def cmd_classify(args) -> int:
    try:
        traj = read_trajectory_csv(args.trajectory)
    except OSError as exc:
        raise InputError(str(exc)) from None
    column = args.column if args.column in traj.names else None
    if column is None:
        raise InputError(f"column {args.column!r} not in {list(traj.names)}")
    cfg = ClassifierConfig(eta1=args.eta1, eta2=args.eta2, mu=args.mu, t_cut=args.t_cut,
                           normalize=args.normalize)
    result = classify_trajectory(traj, traj.component(column), cfg)
    _emit(result.as_dict())
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid = parse_grid(" ".join(args.grid))
    p, base = _load_params(args)
    mode = {"homo": HOMOGENEOUS, "nonhomo": NONHOMOGENEOUS}[args.mode]
    fm = _forcing(args, p, base)[0] if mode == NONHOMOGENEOUS else None
    if args.workers < 1:
        raise InputError("--workers must be at least 1")
    rmap = run_sweep(grid, p, mode, fm, SweepSettings(), workers=args.workers)
    out = _out_dir(args.out)
    write_map_csv(rmap, out / "map.csv")
    write_map_pgm(rmap, out / "map.pgm")
    comparison = compare_maps(rmap)
    report = {
        "mode": mode,
        "grid": {"d_range": list(grid.d_range), "tau_range": list(grid.tau_range), "step": grid.step},
        "class_counts": {str(k): int(v) for k, v in enumerate(np.bincount(rmap.classes.ravel(), minlength=5))},
        "failed_cells": int(rmap.failed.sum()),
        "monotone_fraction": float(monotone_columns(rmap).mean()),
        "boundaries": {k: v["summary"] for k, v in comparison.items()},
        "deviation": {k: v["deviation"] for k, v in comparison.items()},
        "provenance": rmap.provenance,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit({"map": str(out / "map.csv"), "boundaries": report["boundaries"],
           "monotone_fraction": report["monotone_fraction"]})
    return EXIT_OK


def cmd_analyze(args) -> int:
    values = args.values
    if len(values) < 2 or len(values) % 2:
        raise InputError("analyze expects D_s tau_s pairs")
    for D_s, tau_s in zip(values[0::2], values[1::2]):
        if not (D_s > 0 and tau_s > 0):
            raise InputError("D_s and tau_s must be positive")
        root = principal_root(D_s, tau_s)
        _emit({"D_s": D_s, "tau_s": tau_s, "lambda": {"alpha": root.alpha, "beta": root.beta},
               "class": classify_homogeneous(D_s, tau_s).name, "boundaries": boundary_taus(D_s)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _add_params(sp):
    sp.add_argument("--params", metavar="FILE", help="parameter file ('name = value' lines)")
    sp.add_argument("--subject", type=int, choices=sorted(SUBJECTS), help="use a stored subject baseline")


def _add_forcing(sp):
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--data", metavar="FILE", help="pressure record CSV 't,P'")
    src.add_argument("--synth", action="store_true", help="synthetic maneuver (default)")
    src.add_argument("--forcing", metavar="FILE", help="forcing model JSON written by ingest")
    sp.add_argument("--sbp", action="store_true", help="--data already holds systolic pressure")
    sp.add_argument("--pre", type=float, default=30.0, help="baseline padding before the record (s)")
    sp.add_argument("--post", type=float, default=60.0, help="baseline padding after the record (s)")
    sp.add_argument("--window", type=float, default=1.0, help="moving-mean window (s)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="valsalva-dde", description="Baroreflex delay model of the Valsalva maneuver.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="pressure record to forcing model JSON")
    _add_params(sp)
    _add_forcing(sp)
    sp.add_argument("--out", required=True, metavar="DIR")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("simulate", help="integrate the full or reduced model")
    _add_params(sp)
    _add_forcing(sp)
    sp.add_argument("--model", choices=("full", "reduced"), default="reduced")
    sp.add_argument("--no-thoracic", action="store_true", help="omit the thoracic pressure step")
    sp.add_argument("--rtol", type=float, default=1e-8)
    sp.add_argument("--atol", type=float, default=1e-10)
    sp.add_argument("--dt", type=float, default=0.05, help="output sampling step (s)")
    sp.add_argument("--out", required=True, metavar="DIR")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("classify", help="classify a trajectory CSV")
    sp.add_argument("trajectory", metavar="CSV")
    sp.add_argument("--column", default="T_s")
    sp.add_argument("--t-cut", type=float, default=None, help="start of the analysis window (s)")
    sp.add_argument("--eta1", type=float, default=ClassifierConfig.eta1)
    sp.add_argument("--eta2", type=float, default=ClassifierConfig.eta2)
    sp.add_argument("--mu", type=float, default=ClassifierConfig.mu)
    sp.add_argument("--normalize", action="store_true", help="divide amplitudes by the first one")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("sweep", help="region map over (D_s, tau_s)")
    _add_params(sp)
    _add_forcing(sp)
    sp.add_argument("--grid", nargs="+", required=True, metavar="SPEC",
                    help="'lo:hi:step x lo:hi:step', D_s axis first")
    sp.add_argument("--mode", choices=("homo", "nonhomo"), default="homo")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", required=True, metavar="DIR")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("analyze", help="characteristic root and class for D_s tau_s pairs")
    sp.add_argument("values", type=float, nargs="+", metavar="D_s tau_s")
    sp.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except (DdeIntegrationError, SweepError, ConsistencyError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, SignalError, ParameterDerivationError, WindowError, ValueError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
