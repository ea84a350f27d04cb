"""Baroreflex delay model of the Valsalva maneuver.

Modules
-------
dde_core
    Radau IIA integrator for systems with one constant delay.
models
    Five-state and reduced two-state baroreflex models and their parameters.
signal
    Pressure records, SBP extraction and the polynomial forcing surrogate.
analytic
    Lambert W stability theory of the homogeneous reduced system.
classifier
    Sink / spiral / limit-cycle classification of a trajectory.
sweep
    Region maps over the (D_s, tau_s) plane.
cli
    ``valsalva-dde`` command-line tool.
"""
from .analytic import RegionClass, classify_homogeneous, lambert_w0, principal_root
from .classifier import BehaviorClass, ClassifierConfig, classify_trajectory
from .dde_core import DdeSystem, SolverConfig, Trajectory, integrate
from .models import (
    NOMINAL_BASELINE,
    SUBJECTS,
    ParameterSet,
    SubjectBaseline,
    full_system,
    initial_state,
    nominal_parameters,
    reduced_system,
)
from .signal import ForcingModel, build_forcing, synth_vm
from .sweep import GridSpec, RegionMap, SweepSettings, run_sweep

__version__ = "0.1.0"

__all__ = [
    "BehaviorClass",
    "NOMINAL_BASELINE",
    "SUBJECTS",
    "ClassifierConfig",
    "DdeSystem",
    "ForcingModel",
    "GridSpec",
    "ParameterSet",
    "RegionClass",
    "RegionMap",
    "SolverConfig",
    "SubjectBaseline",
    "SweepSettings",
    "Trajectory",
    "build_forcing",
    "classify_homogeneous",
    "classify_trajectory",
    "full_system",
    "initial_state",
    "integrate",
    "lambert_w0",
    "nominal_parameters",
    "principal_root",
    "reduced_system",
    "run_sweep",
    "synth_vm",
]
