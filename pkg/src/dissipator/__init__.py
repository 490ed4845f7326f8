"""Numerical convex-integration toolkit for dissipative weak Euler flows.

The package builds velocity/pressure/stress triples on the periodic space-time
domain T^3 x S^1, drives the stress toward zero through highly oscillatory
Beltrami-wave corrections, and ships the measurement and reporting tools used
to audit each step.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DissipatorError,
    NumericalAbort,
    ResolutionError,
)
from .fields import (
    Grid4,
    PeriodicField,
    c1_norm,
    holder_norm,
    mollify_values,
    random_band_limited,
    resample_values,
    sup_norm,
)
from .operators import (
    inverse_divergence,
    leray_project,
    operator_identity_report,
    oscillatory_integral,
    stationary_phase_check,
)
from .beltrami import (
    BeltramiBasis,
    GammaSolver,
    PhasePartition,
    build_basis,
)
from .perturbation import (
    EnergyProfile,
    PerturbationBundle,
    assemble_new_stress,
    build_new_pressure,
    build_perturbation,
    compute_rho,
)
from .iteration import (
    EulerReynoldsState,
    RunReport,
    ScheduleParameters,
    StepParameters,
    StepReport,
    calibrate_constants,
    choose_parameters,
    growth_constant,
    parameters_from_override,
    pressure_exponent,
    run_schedule,
    spectrum_prediction,
    step,
    theta_bound,
)
from .diagnostics import (
    energy_band_check,
    estimate_audit,
    euler_reynolds_residual,
    holder_cauchy_report,
    pressure_c1_track,
    spectrum_measure,
)
from .config import RunConfig, load_config, parse_config
from .snapshots import read_snapshot, write_snapshot
