"""Spin-selective photoluminescence decay in chiral quantum-dot assemblies:
Monte Carlo simulation of precession-modulated decays, IRF-reconvolution
fitting, and field/azimuth sweeps of the RCP-LCP lifetime difference."""

from .core import (
    AcquisitionMeta,
    BiexpFitResult,
    DecayHistogram,
    FieldGeometry,
    IrfModel,
    Polarization,
    SpinModelParams,
    initial_phase,
    transverse_field,
)
from .reconvolution import (
    CalibrationError,
    FitConfig,
    FitError,
    IllConditioned,
    NonConvergence,
    calibrate_irf,
    extract_long_lifetime,
    fit_biexp_irf,
    model_eval,
    model_jacobian,
)
from .simulator import (
    SimRun,
    SimulationGuardError,
    expected_counts,
    expected_decay,
    larmor_frequency,
    occupancy,
    simulate_decay,
    simulate_with_irf,
)
from .sweep import (
    SweepPlan,
    SweepResult,
    cosine_fit,
    delta_lifetime,
    first_extremum,
    run_sweep,
    shuffle_plan,
)

__version__ = "0.1.0"
