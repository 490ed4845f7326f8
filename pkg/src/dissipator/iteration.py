"""Constant calibration, refinement-step parameter selection, the single
correction step, and the outer double-exponential amplitude schedule.

Threshold arithmetic (growth constant, Hoelder exponent bounds, spectrum
slope) is carried out in exact rational arithmetic so that sign flips and
limits can be asserted exactly rather than to a tolerance.
"""

import math
import time
from dataclasses import dataclass, field as dc_field
from fractions import Fraction

import numpy as np

from .errors import ConfigError, NumericalAbort, ResolutionError
from .fields import (
    TWO_PI,
    Grid4,
    PeriodicField,
    c1_norm,
    mollify_values,
    random_band_limited,
    space_integral,
    sup_norm,
    sym_operator_norms,
    trace6,
)
from .operators import divergence_values
from .beltrami import PhasePartition, build_basis
from .perturbation import (
    EnergyProfile,
    assemble_new_stress,
    build_new_pressure,
    build_perturbation,
    build_waves,
    compute_rho,
)


# ---------------------------------------------------------------------------
# exact schedule arithmetic

def _eps_fraction(eps):
    f = Fraction(eps)
    if not 0 < f < Fraction(1, 4):
        raise ConfigError(f"sharpness parameter must lie in (0, 1/4), got {eps}")
    return f


def growth_constant(eps):
    """Exact value of 3(1+2e)/(1-2e) + e for the derivative-growth envelope."""
    f = _eps_fraction(eps)
    return 3 * (1 + 2 * f) / (1 - 2 * f) + f


def theta_bound(eps):
    """Supremum of Hoelder exponents reached by the schedule, as a Fraction.

    Evaluates (1-2e)/(10+19e-6e^2); tends to 1/10 as e -> 0.
    """
    f = _eps_fraction(eps)
    return (1 - 2 * f) / (10 + 19 * f - 6 * f * f)


def pressure_exponent(eps):
    """Supremum of pressure Hoelder exponents, 1/(1+(1+4e)(c+1)) -> 1/5."""
    f = _eps_fraction(eps)
    return 1 / (1 + (1 + 4 * f) * (growth_constant(eps) + 1))


def velocity_cauchy_exponent(theta, eps):
    """Per-stage log-factor of the C^theta velocity increments.

    Negative iff theta < theta_bound(eps); zero exactly at the bound.
    """
    c = growth_constant(eps)
    th = Fraction(theta)
    return th * c * Fraction(3, 2) - (1 - th) / 2


def pressure_cauchy_exponent(rho_exp, eps):
    """Per-stage log-factor of the C^rho pressure increments.

    Negative iff rho_exp < pressure_exponent(eps); zero exactly at the bound.
    """
    f = _eps_fraction(eps)
    vartheta = (1 + 4 * f) * (growth_constant(eps) + 1)
    r = Fraction(rho_exp)
    return r * (1 + vartheta) - 1


def spectrum_prediction(a, b, c, n):
    """Stage frequency, its energy level, and the log-log spectrum slope.

    Returns (frequency_n, energy_n, slope) with
    frequency_n = a**((b*c + 1/2) * b**n) and energy_n = frequency_n**slope,
    slope = -(3 + 2*b*c)/(1 + 2*b*c).
    """
    if a <= 1:
        raise ConfigError(f"schedule base must exceed 1, got {a}")
    bc = b * c
    slope = -(3 + 2 * bc) / (1 + 2 * bc)
    log_freq = float(bc + 0.5) * float(b) ** n * math.log(float(a))
    if log_freq > 690.0:
        return math.inf, 0.0, float(slope)
    freq = math.exp(log_freq)
    energy = math.exp(float(slope) * log_freq)
    return freq, energy, float(slope)


def delta_sequence(a, b, n_steps):
    """Amplitudes a**(-b**n) for stages 0..n_steps inclusive."""
    if a <= 1:
        raise ConfigError(f"schedule base must exceed 1, got {a}")
    return [float(a) ** (-(float(b) ** n)) for n in range(n_steps + 1)]


@dataclass(frozen=True)
class ScheduleParameters:
    """Outer-loop schedule: amplitudes delta_n = a**(-b**n) for n_steps stages."""
    a: float
    eps: float
    n_steps: int
    b: float = 1.5
    theta_target: float = None

    def __post_init__(self):
        if self.a < 1.5:
            raise ConfigError(f"schedule base must be >= 1.5, got {self.a}")
        if self.b < 1.5:
            raise ConfigError(f"schedule exponent must be >= 1.5, got {self.b}")
        _eps_fraction(self.eps)
        if self.n_steps < 0:
            raise ConfigError("n_steps must be nonnegative")
        if self.theta_target is not None:
            if not Fraction(self.theta_target) < theta_bound(self.eps):
                raise ConfigError(
                    f"theta target {self.theta_target} is not below the "
                    f"attainable bound {float(theta_bound(self.eps)):.6f}")

    @property
    def c(self):
        return float(growth_constant(self.eps))

    @property
    def amplitude_halves(self):
        """True when every stage amplitude at least halves (a >= 4)."""
        return self.a >= 4.0

    def deltas(self):
        return delta_sequence(self.a, self.b, self.n_steps)

    def envelope(self, n):
        """Derivative-size envelope a**(c * b**n) for stage n."""
        log_env = self.c * self.b ** n * math.log(self.a)
        return math.inf if log_env > 690.0 else math.exp(log_env)

    def as_dict(self):
        return {
            "a": self.a, "b": self.b, "eps": self.eps,
            "n_steps": self.n_steps, "c": self.c,
            "theta_target": self.theta_target,
            "amplitude_halves": self.amplitude_halves,
        }


# ---------------------------------------------------------------------------
# constant calibration

def calibrate_constants(energy, ball_radius, seed=2024):
    """Calibrate (eta, m_const) for an energy profile and decomposition ball.

    eta: largest value in (0, 1] (by bisection) such that the per-unit-
    amplitude lower bracket on the energy headroom density stays above
    2*eta/ball_radius, which keeps the normalized stress inside the
    decomposition ball.

    m_const: measured sup of a unit-density correction wave on a probe that
    sweeps the phase cells and pushes the stress to 90% of the admissible
    ball distance, scaled by the headroom-density upper bracket, with a
    safety factor 2 and floor 1.
    """
    if not isinstance(energy, EnergyProfile):
        energy = EnergyProfile(energy)
    e_min, e_max = energy.bounds()
    vol = 3.0 * TWO_PI ** 3
    margin = math.sqrt(e_max) + 1.0

    def headroom(eta):
        return (e_min / 4.0 - eta * margin) / vol - 2.0 * eta / ball_radius

    if headroom(1.0) > 0.0:
        eta = 1.0
    else:
        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if headroom(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        eta = lo
    if eta <= 0.0:
        raise NumericalAbort("calibration failed: no positive eta admissible")

    basis = build_basis(5)
    partition = PhasePartition()
    grid = Grid4(32, 8)
    rho = np.ones(grid.n_time)
    v = 0.9 * random_band_limited(grid, "vector3", 1, seed=seed).values
    r6 = random_band_limited(grid, "sym_tensor3", 1, seed=seed + 1).values
    mean = trace6(r6) / 3.0
    for c in range(3):
        r6[c] -= mean
    worst = float(np.max(sym_operator_norms(r6)))
    r6 *= 0.45 * ball_radius / max(worst, 1e-300)
    w_o, _, _ = build_waves(grid, basis, partition, 2, 1, rho,
                            v_ell_values=v, r_ell6=r6)
    unit_sup = sup_norm(w_o)
    rho_scale = (1.25 * e_max + margin) / vol
    m_const = max(1.0, 2.0 * unit_sup * math.sqrt(rho_scale))
    return eta, m_const


# ---------------------------------------------------------------------------
# per-step parameters

@dataclass(frozen=True)
class StepParameters:
    """Frequencies and scales for one correction step, with range checks."""
    delta: float
    delta_bar: float
    eps: float
    omega: float
    alpha: float
    ell: float
    mu: int
    lam: int
    d_bound: float
    l_v: float
    lambda_v: float
    phase_order: int
    eta: float = None
    m_const: float = None
    checks: tuple = ()

    @property
    def all_ok(self):
        return all(ok for (_, ok, _) in self.checks)

    def failed_checks(self):
        return [row for row in self.checks if not row[1]]

    def as_dict(self):
        return {
            "delta": self.delta, "delta_bar": self.delta_bar,
            "eps": self.eps, "omega": self.omega, "alpha": self.alpha,
            "ell": self.ell, "mu": self.mu, "lam": self.lam,
            "d_bound": self.d_bound, "l_v": self.l_v,
            "lambda_v": self.lambda_v, "phase_order": self.phase_order,
            "eta": self.eta, "m_const": self.m_const,
            "checks": [list(row) for row in self.checks],
        }


def _sharpness_derived(eps):
    omega = eps / (2.0 + eps)
    alpha = omega / (2.0 * (1.0 + omega))
    phase_order = int(math.floor((1.0 + omega) / omega)) + 1
    return omega, alpha, phase_order


def _range_rows(delta, delta_bar, eps, omega, ell, mu, lam, d_bound,
                lo=None, hi=None, eta=None, l_v=None):
    slack = 1.0 + 1e-9
    rows = [
        ("mu_at_least_inverse_delta", mu * delta * slack >= 1.0,
         f"mu={mu}, 1/delta={1.0 / delta:.6g}"),
        ("lam_above_mu_d_power", lam * slack >= (mu * d_bound) ** (1.0 + omega),
         f"lam={lam}, (mu*D)^(1+omega)={(mu * d_bound) ** (1.0 + omega):.6g}"),
        ("lam_above_inverse_ell_power",
         lam * ell ** (1.0 + omega) * slack >= 1.0,
         f"lam*ell^(1+omega)={lam * ell ** (1.0 + omega):.6g}"),
        ("integer_frequencies",
         float(mu).is_integer() and float(lam).is_integer() and lam % mu == 0,
         f"lam={lam}, mu={mu}, lam/mu={lam / mu:.6g}"),
        ("mu_squared_d_window",
         lam / 2.0 <= mu * mu * d_bound * slack
         and mu * mu * d_bound <= lam * slack,
         f"lam/2={lam / 2.0:.6g}, mu^2*D={mu * mu * d_bound:.6g}, lam={lam}"),
    ]
    if lo is not None:
        rows.append(("lam_in_doubling_window",
                     lo <= lam * slack and lam <= hi * slack,
                     f"lo={lo:.6g}, lam={lam}, hi={hi:.6g}"))
    if eta is not None:
        rows.append(("ell_below_eta_delta_over_d",
                     ell <= eta * delta / d_bound * slack,
                     f"ell={ell:.6g}, eta*delta/D={eta * delta / d_bound:.6g}"))
        if l_v is not None:
            rows.append(("l_v_at_least_inverse_eta",
                         l_v * eta * slack >= 1.0,
                         f"l_v={l_v:.6g}, 1/eta={1.0 / eta:.6g}"))
    return tuple(rows)


def _check_amplitude_pair(delta, delta_bar, mode):
    slack = 1.0 + 1e-12
    if mode == "strict":
        cap = 0.5 * delta ** 1.5
        if delta_bar > cap * slack:
            raise ConfigError(
                f"target amplitude {delta_bar:.6g} exceeds half the 3/2 power "
                f"{cap:.6g} of the current amplitude {delta:.6g}")
    elif mode == "relaxed":
        cap = min(delta ** 1.5, 0.5 * delta)
        if delta_bar > cap * slack:
            raise ConfigError(
                f"target amplitude {delta_bar:.6g} exceeds the relaxed cap "
                f"{cap:.6g} for amplitude {delta:.6g}")
    else:
        raise ConfigError(f"unknown amplitude mode {mode!r}")


def choose_parameters(delta, delta_bar, eps, d_bound, v_sup=0.0,
                      l_v=None, lambda_v=None, eta=None, m_const=None,
                      mode="strict"):
    """Pick (ell, mu, lam) for one step and verify every range condition.

    The integer pair is searched over the doubling window
    [lambda_v * (D*delta/delta_bar^2)**(1+eps), 2x that] subject to
    lam/2 <= mu^2 * D <= lam, mu | lam, and the frequency floor conditions.
    Smallest admissible lam wins, ties to the smaller mu.
    """
    if not 0.0 < delta <= 1.0:
        raise ConfigError(f"amplitude must lie in (0, 1], got {delta}")
    if delta_bar <= 0.0:
        raise ConfigError("target amplitude must be positive")
    if d_bound < 1.0:
        raise ConfigError(f"derivative bound must be >= 1, got {d_bound}")
    if eps <= 0.0:
        raise ConfigError(f"sharpness must be positive, got {eps}")
    _check_amplitude_pair(delta, delta_bar, mode)
    omega, alpha, phase_order = _sharpness_derived(eps)
    if l_v is None:
        if eta is None:
            raise ConfigError(
                "need either an explicit l_v or a calibrated eta")
        l_v = max(1.0, 1.0 / eta)
    if lambda_v is None:
        lambda_v = max(1.0, l_v ** (1.0 + omega))
    ell = delta_bar / (l_v * d_bound)
    if not 0.0 < ell < math.pi:
        raise ConfigError(f"mollification scale {ell:.6g} outside (0, pi)")

    lo = lambda_v * (d_bound * delta / delta_bar ** 2) ** (1.0 + eps)
    hi = 2.0 * lo
    if not math.isfinite(hi) or hi > 1e12:
        raise ResolutionError(
            f"frequency window [{lo:.3e}, {hi:.3e}] is beyond desk range")
    d = float(d_bound)
    mu_min = max(1, math.ceil(math.sqrt(lo / (2.0 * d)) - 1e-9),
                 math.ceil(1.0 / delta - 1e-9))
    mu_max = math.floor(math.sqrt(hi / d) + 1e-9)
    if mu_max - mu_min > 2_000_000:
        raise ResolutionError(
            f"frequency window [{lo:.3e}, {hi:.3e}] too wide to search")
    floor_ell = ell ** (-(1.0 + omega))
    best = None
    for mu in range(mu_min, mu_max + 1):
        lam_lo = max(math.ceil(lo - 1e-9),
                     math.ceil(mu * mu * d - 1e-9),
                     math.ceil((mu * d) ** (1.0 + omega) - 1e-9),
                     math.ceil(floor_ell - 1e-9))
        lam_hi = min(math.floor(hi + 1e-9),
                     math.floor(2.0 * mu * mu * d + 1e-9))
        if lam_lo > lam_hi:
            continue
        lam = mu * math.ceil(lam_lo / mu)
        if lam > lam_hi:
            continue
        if best is None or (lam, mu) < best:
            best = (lam, mu)
    if best is None:
        raise ResolutionError(
            f"no admissible integer frequency pair: window [{lo:.6g}, "
            f"{hi:.6g}], derivative bound {d:.6g}, mu range "
            f"[{mu_min}, {mu_max}]")
    lam, mu = best
    checks = _range_rows(delta, delta_bar, eps, omega, ell, mu, lam, d,
                         lo=lo, hi=hi, eta=eta, l_v=l_v)
    params = StepParameters(delta=float(delta), delta_bar=float(delta_bar),
                            eps=float(eps), omega=omega, alpha=alpha,
                            ell=float(ell), mu=int(mu), lam=int(lam),
                            d_bound=d, l_v=float(l_v),
                            lambda_v=float(lambda_v),
                            phase_order=phase_order, eta=eta,
                            m_const=m_const, checks=checks)
    if not params.all_ok:
        raise NumericalAbort(
            f"selected parameters fail range checks: {params.failed_checks()}")
    return params


def parameters_from_override(delta, delta_bar, eps, d_bound, override,
                             eta=None, m_const=None):
    """Build StepParameters from pinned (lam, mu, ell); report violations.

    Desk grids cannot hold the analytically scheduled frequencies, so an
    override pins them; every range condition is still evaluated and the
    failing ones are returned for warn/fail handling by the caller.
    """
    try:
        lam = int(override["lam"])
        mu = int(override["mu"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"override needs integer lam and mu: {exc}")
    if lam < 1 or mu < 1 or lam % mu != 0:
        raise ConfigError(
            f"override frequencies must be positive with mu | lam, "
            f"got lam={lam}, mu={mu}")
    ell = float(override.get("ell", 0.0))
    if ell < 0 or ell >= math.pi:
        raise ConfigError(f"override mollification scale {ell} outside [0, pi)")
    delta_bar = float(override.get("delta_bar", delta_bar))
    omega, alpha, phase_order = _sharpness_derived(eps)
    l_v = float(override.get("l_v", 1.0))
    lambda_v = float(override.get("lambda_v", 1.0))
    ell_for_checks = ell if ell > 0 else delta_bar / (l_v * d_bound)
    checks = _range_rows(delta, delta_bar, eps, omega, ell_for_checks, mu,
                         lam, float(d_bound), eta=eta, l_v=None)
    params = StepParameters(delta=float(delta), delta_bar=delta_bar,
                            eps=float(eps), omega=omega, alpha=alpha,
                            ell=ell, mu=mu, lam=lam, d_bound=float(d_bound),
                            l_v=l_v, lambda_v=lambda_v,
                            phase_order=phase_order, eta=eta,
                            m_const=m_const, checks=checks)
    return params


# ---------------------------------------------------------------------------
# state and step

@dataclass
class EulerReynoldsState:
    """A velocity/pressure/stress triple on a space-time grid."""
    grid: Grid4
    v: np.ndarray
    p: np.ndarray
    r_ring6: np.ndarray
    generation: int = 0
    delta: float = 1.0
    d_bound: float = 1.0

    @classmethod
    def zero(cls, grid):
        return cls(grid, np.zeros((3,) + grid.shape), np.zeros(grid.shape),
                   np.zeros((6,) + grid.shape))

    @property
    def is_zero(self):
        return (sup_norm(self.v) == 0.0 and sup_norm(self.p) == 0.0
                and sup_norm(self.r_ring6) == 0.0)

    def kinetic(self):
        sq = np.einsum("c...,c...->...", self.v, self.v)
        return space_integral(sq, self.grid)

    def stress_sup(self):
        return float(np.max(sym_operator_norms(self.r_ring6)))

    def measured_d(self):
        """max(1, C1 norm of v, C1 norm of the stress), space-time."""
        if self.is_zero:
            return 1.0
        dv = c1_norm(PeriodicField(self.grid, "vector3", self.v,
                                   _validate=False))
        dr = c1_norm(PeriodicField(self.grid, "sym_tensor3", self.r_ring6,
                                   _validate=False))
        return max(1.0, dv, dr)

    def normalize_pressure(self):
        self.p = self.p - self.p.mean(axis=(0, 1, 2), keepdims=True)


@dataclass
class EstimateRow:
    name: str
    measured: float
    bound: float
    ratio: float
    ok: bool
    note: str = ""

    def as_dict(self):
        return {"name": self.name, "measured": self.measured,
                "bound": self.bound, "ratio": self.ratio, "ok": self.ok,
                "note": self.note}

    def line(self):
        flag = "ok" if self.ok else "FAIL"
        out = (f"{self.name}: measured={self.measured:.6e} "
               f"bound={self.bound:.6e} ratio={self.ratio:.4f} [{flag}]")
        if self.note:
            out += f" ({self.note})"
        return out


@dataclass
class StepReport:
    """Measured margins for one correction step."""
    generation: int
    delta: float
    delta_bar: float
    lam: int
    mu: int
    ell: float
    d_bound: float
    eta: float
    m_const: float
    div_sup: float
    div_rel: float
    trace_sup: float
    energy_ratio_min: float
    energy_ratio_max: float
    corrector_disagreement: float
    empirical_a: float
    stress_sup: float
    rows: list = dc_field(default_factory=list)
    hypothesis_rows: list = dc_field(default_factory=list)
    warnings: list = dc_field(default_factory=list)
    runtime_s: float = 0.0

    def as_dict(self, include_timing=False):
        out = {
            "generation": self.generation, "delta": self.delta,
            "delta_bar": self.delta_bar, "lam": self.lam, "mu": self.mu,
            "ell": self.ell, "d_bound": self.d_bound, "eta": self.eta,
            "m_const": self.m_const, "div_sup": self.div_sup,
            "div_rel": self.div_rel, "trace_sup": self.trace_sup,
            "energy_ratio_min": self.energy_ratio_min,
            "energy_ratio_max": self.energy_ratio_max,
            "corrector_disagreement": self.corrector_disagreement,
            "empirical_a": self.empirical_a, "stress_sup": self.stress_sup,
            "rows": [r.as_dict() for r in self.rows],
            "hypothesis_rows": [r.as_dict() for r in self.hypothesis_rows],
            "warnings": list(self.warnings),
        }
        if include_timing:
            out["runtime_s"] = self.runtime_s
        return out

    def lines(self):
        head = (f"stage {self.generation}: lam={self.lam} mu={self.mu} "
                f"ell={self.ell:.6g} delta={self.delta:.6g} "
                f"delta_bar={self.delta_bar:.6g}")
        return [head] + [r.line() for r in self.hypothesis_rows + self.rows]


def perturbation_for_state(state, delta_bar, params, basis, partition,
                           energy, tolerance_scale=1.0):
    """Mollify, size the amplitude, and build the correction bundle.

    Factored out of step() so that audits can re-derive the exact waves of a
    recorded stage from its snapshot.  Returns (bundle, v_arg, r_arg) where
    the two arguments are the smoothed fields, or None when identically zero.
    """
    grid = state.grid
    if not isinstance(energy, EnergyProfile):
        energy = EnergyProfile(energy)
    if params.ell > 0.0 and not state.is_zero:
        v_ell = mollify_values(state.v, grid, params.ell)
        r_ell = mollify_values(state.r_ring6, grid, params.ell)
    else:
        v_ell = state.v
        r_ell = state.r_ring6
    v_arg = None if sup_norm(v_ell) == 0.0 else v_ell
    r_arg = None if sup_norm(r_ell) == 0.0 else r_ell
    rho = compute_rho(energy.samples(grid), v_arg, grid, delta_bar)
    bundle = build_perturbation(grid, basis, partition, params.lam,
                                params.mu, rho, v_ell_values=v_arg,
                                r_ell6=r_arg,
                                corrector_tol=1e-8 * tolerance_scale,
                                tol_scale=tolerance_scale)
    return bundle, v_arg, r_arg


def step(state, delta, delta_bar, params, basis, energy, partition=None,
         hypothesis_mode="warn", tolerance_scale=1.0):
    """Run one correction step and measure every conclusion estimate.

    Returns (new_state, StepReport).  At desk resolution the conclusion
    rows are measurements with recorded margins, not certified bounds.
    """
    t0 = time.perf_counter()
    grid = state.grid
    if partition is None:
        partition = PhasePartition()
    if not isinstance(energy, EnergyProfile):
        energy = EnergyProfile(energy)
    eta = params.eta if params.eta is not None else 1.0
    m_const = params.m_const if params.m_const is not None else 1.0
    warnings = []

    e_samp = energy.samples(grid)
    gap0 = e_samp - state.kinetic()
    slack = 1.0 + 1e-9
    hyp_rows = []
    lo_ok = bool(np.all(gap0 * slack >= 0.75 * delta * e_samp))
    hi_ok = bool(np.all(gap0 <= 1.25 * delta * e_samp * slack))
    gap_ratio = gap0 / (delta * e_samp)
    hyp_rows.append(EstimateRow(
        "hypothesis_energy_window", float(np.min(gap_ratio)), 0.75,
        float(np.min(gap_ratio)) / 0.75, lo_ok and hi_ok,
        f"gap/(delta*e) in [{np.min(gap_ratio):.4f}, {np.max(gap_ratio):.4f}],"
        " want [0.75, 1.25]"))
    r_sup0 = state.stress_sup()
    hyp_rows.append(EstimateRow(
        "hypothesis_stress_size", r_sup0, eta * delta,
        r_sup0 / (eta * delta), r_sup0 <= eta * delta * slack))
    bad = [r for r in hyp_rows if not r.ok]
    if bad:
        if hypothesis_mode == "fail":
            raise NumericalAbort(
                "step hypotheses violated: " + "; ".join(r.line() for r in bad))
        warnings.extend("hypothesis violated: " + r.line() for r in bad)

    mollified = params.ell > 0.0
    if not mollified:
        warnings.append("mollification skipped (scale pinned to 0)")
    bundle, v_arg, r_arg = perturbation_for_state(
        state, delta_bar, params, basis, partition, energy,
        tolerance_scale=tolerance_scale)
    disagreement = bundle.corrector.disagreement if bundle.corrector else 0.0
    if bundle.corrector is not None and not bundle.corrector.agrees:
        warnings.append(
            f"corrector routes disagree by {disagreement:.3e} "
            "(aliased amplitude tail at this resolution)")

    w = bundle.w
    w_o = bundle.w_o
    v_old = None if state.is_zero else state.v
    p_old = None if state.is_zero else state.p
    r_old6 = None if sup_norm(state.r_ring6) == 0.0 else state.r_ring6

    v1 = state.v + w
    p1 = build_new_pressure(p_old, w_o, w, v_old, v_arg, grid)
    r1 = assemble_new_stress(grid, w, w_o, v_old, v_arg, r_old6, r_arg)
    del bundle

    new_state = EulerReynoldsState(grid, v1, p1, r1,
                                   generation=state.generation + 1,
                                   delta=delta_bar)
    new_state.normalize_pressure()

    div_sup = float(np.max(np.abs(divergence_values(v1, grid))))
    v1_sup = sup_norm(v1)
    div_rel = div_sup / max(v1_sup, 1e-300)
    trace_sup = float(np.max(np.abs(trace6(r1))))
    r1_sup = float(np.max(sym_operator_norms(r1)))
    sq1 = np.einsum("c...,c...->...", v1, v1)
    gap1 = e_samp - space_integral(sq1, grid)
    ratio1 = gap1 / (delta_bar * e_samp)
    e_lo, e_hi = float(np.min(ratio1)), float(np.max(ratio1))
    c0 = sup_norm(w)
    p_diff = p1 - (state.p - state.p.mean(axis=(0, 1, 2), keepdims=True))
    pr = sup_norm(p_diff - p_diff.mean(axis=(0, 1, 2), keepdims=True))
    c1_v1 = c1_norm(PeriodicField(grid, "vector3", v1, _validate=False))
    c1_r1 = c1_norm(PeriodicField(grid, "sym_tensor3", r1, _validate=False))
    c1_meas = max(c1_v1, c1_r1)
    new_state.d_bound = max(1.0, c1_meas)
    bound_form = delta ** 1.5 * (params.d_bound / delta_bar ** 2) ** (1.0 + params.eps)
    empirical_a = c1_meas / bound_form

    rows = [
        EstimateRow("energy_window_low", e_lo, 0.75, e_lo / 0.75,
                    e_lo * slack >= 0.75),
        EstimateRow("energy_window_high", e_hi, 1.25, e_hi / 1.25,
                    e_hi <= 1.25 * slack),
        EstimateRow("stress_decay", r1_sup, eta * delta_bar,
                    r1_sup / (eta * delta_bar),
                    r1_sup <= eta * delta_bar * slack),
        EstimateRow("velocity_increment", c0, m_const * math.sqrt(delta),
                    c0 / (m_const * math.sqrt(delta)),
                    c0 <= m_const * math.sqrt(delta) * slack),
        EstimateRow("pressure_increment", pr, m_const ** 2 * delta,
                    pr / (m_const ** 2 * delta),
                    pr <= m_const ** 2 * delta * slack),
        EstimateRow("c1_growth", c1_meas, bound_form, empirical_a, True,
                    "prefactor recorded, not asserted"),
    ]
    if not mollified:
        rows.append(EstimateRow(
            "mollification_difference", 0.0, 0.0, 0.0, True,
            "identity mollifier: smooth/raw difference terms vanish"))

    report = StepReport(
        generation=state.generation, delta=delta, delta_bar=delta_bar,
        lam=params.lam, mu=params.mu, ell=params.ell,
        d_bound=params.d_bound, eta=eta, m_const=m_const,
        div_sup=div_sup, div_rel=div_rel, trace_sup=trace_sup,
        energy_ratio_min=e_lo, energy_ratio_max=e_hi,
        corrector_disagreement=disagreement, empirical_a=empirical_a,
        stress_sup=r1_sup, rows=rows, hypothesis_rows=hyp_rows,
        warnings=warnings, runtime_s=time.perf_counter() - t0)
    return new_state, report


# ---------------------------------------------------------------------------
# outer schedule

@dataclass
class RunReport:
    """Hierarchical record of a schedule run, JSON-ready and deterministic."""
    schedule: dict
    steps: list
    d_track: list
    stop_reason: str
    calibration: dict
    warnings: list = dc_field(default_factory=list)
    runtime_s: float = 0.0

    def as_dict(self, include_timing=False):
        return {
            "schedule": self.schedule,
            "steps": [s.as_dict(include_timing=include_timing)
                      for s in self.steps],
            "d_track": self.d_track,
            "stop_reason": self.stop_reason,
            "calibration": self.calibration,
            "warnings": list(self.warnings),
            **({"runtime_s": self.runtime_s} if include_timing else {}),
        }


def _basis_axis_band(basis):
    out = 0
    for cert in basis.certificates:
        for vec in cert.vectors:
            out = max(out, max(abs(c) for c in vec))
    return out


def run_schedule(energy, schedule, grid, overrides=None, basis=None,
                 partition=None, override_mode="warn", eta=None,
                 m_const=None, initial_state=None, tolerance_scale=1.0,
                 l_v=None, lambda_v=None):
    """Apply the correction step along the amplitude schedule.

    overrides: optional dict mapping stage index -> override dict with pinned
    integer frequencies (and optional mollification scale); range violations
    are warnings in "warn" mode and ConfigError in "fail" mode.  Stops early
    with a recorded reason when the grid cannot hold the next frequency band.
    """
    t0 = time.perf_counter()
    if override_mode not in ("warn", "fail"):
        raise ConfigError(f"override mode must be warn or fail, got {override_mode!r}")
    if not isinstance(energy, EnergyProfile):
        energy = EnergyProfile(energy)
    if basis is None:
        basis = build_basis(5)
    if partition is None:
        partition = PhasePartition()
    if eta is None or m_const is None:
        eta, m_const = calibrate_constants(energy, basis.ball_radius)
    overrides = overrides or {}
    if isinstance(overrides, (list, tuple)):
        overrides = {i: ov for i, ov in enumerate(overrides) if ov}
    axis_band = _basis_axis_band(basis)
    run_warnings = []

    state = initial_state if initial_state is not None else EulerReynoldsState.zero(grid)
    states = [state]
    reports = []
    d_track = []
    deltas = schedule.deltas()
    stop_reason = "completed"
    if not schedule.amplitude_halves:
        msg = (f"schedule base {schedule.a} < 4: stage amplitudes do not "
               "halve, the relaxed amplitude pairing fails")
        if override_mode == "fail":
            raise ConfigError(msg)
        run_warnings.append(msg)

    for n in range(schedule.n_steps):
        delta, delta_bar = deltas[n], deltas[n + 1]
        d_meas = state.measured_d()
        env = schedule.envelope(n)
        d_track.append({"stage": n, "measured_d": d_meas, "envelope": env,
                        "within_envelope": bool(d_meas <= env * (1 + 1e-9))})
        ov = overrides.get(n)
        if ov is not None:
            params = parameters_from_override(delta, delta_bar,
                                              schedule.eps, d_meas, ov,
                                              eta=eta, m_const=m_const)
            failed = params.failed_checks()
            if failed:
                msg = (f"stage {n} override violates range conditions: "
                       + "; ".join(name for (name, _, _) in failed))
                if override_mode == "fail":
                    raise ConfigError(msg)
                run_warnings.append(msg)
            delta_bar = params.delta_bar
        else:
            try:
                params = choose_parameters(delta, delta_bar, schedule.eps,
                                           d_meas, v_sup=sup_norm(state.v),
                                           l_v=l_v, lambda_v=lambda_v,
                                           eta=eta, m_const=m_const,
                                           mode="relaxed")
            except (ResolutionError, ConfigError) as exc:
                stop_reason = f"parameter selection failed at stage {n}: {exc}"
                break
        band = params.lam * axis_band
        if band > grid.n_space // 2 - 1:
            stop_reason = (f"resolution exhausted at stage {n}: spatial band "
                           f"{band} exceeds grid capacity {grid.n_space // 2 - 1}")
            break
        state, rep = step(state, delta, delta_bar, params, basis, energy,
                          partition=partition, hypothesis_mode="warn",
                          tolerance_scale=tolerance_scale)
        if ov is not None and params.failed_checks():
            rep.warnings.append(
                "override range violations: "
                + "; ".join(name for (name, _, _) in params.failed_checks()))
        states.append(state)
        reports.append(rep)

    d_final = states[-1].measured_d()
    d_track.append({"stage": len(states) - 1, "measured_d": d_final,
                    "envelope": schedule.envelope(len(states) - 1),
                    "within_envelope": bool(
                        d_final <= schedule.envelope(len(states) - 1) * (1 + 1e-9))})
    report = RunReport(schedule=schedule.as_dict(), steps=reports,
                       d_track=d_track, stop_reason=stop_reason,
                       calibration={"eta": eta, "m_const": m_const},
                       warnings=run_warnings,
                       runtime_s=time.perf_counter() - t0)
    return states, report
