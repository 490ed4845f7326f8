"""Identity verification and estimate measurement.

Everything here is read-only over states and bundles: residual of the
momentum balance, energy-band verdicts, spectrum measurement, Hoelder/
Cauchy decay tables, pressure growth tracking, and the estimate audit in
which every measured quantity is compared against its parameter
combination with constants stripped.

No plotting here; reports are plain data for the command-line layer.
"""

import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction

import numpy as np

from .errors import ConfigError
from .fields import (
    Grid4,
    PeriodicField,
    c1_norm,
    derivative_multiplier,
    fft4,
    holder_norm,
    ifft4_real,
    resample_values,
    space_integral,
    sup_norm,
    sym_operator_norms,
    trace6,
)
from .iteration import theta_bound, velocity_cauchy_exponent
from .perturbation import EnergyProfile

_SYM_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def _axis_orders(axis):
    orders = [0, 0, 0, 0]
    orders[axis] = 1
    return tuple(orders)


# ---------------------------------------------------------------------------
# momentum-balance residual

@dataclass
class ResidualNorms:
    sup: float
    mean_square: float
    n_space: int
    n_time: int
    space_oversample: int
    time_oversample: int

    def as_dict(self):
        return {"sup": self.sup, "mean_square": self.mean_square,
                "n_space": self.n_space, "n_time": self.n_time,
                "space_oversample": self.space_oversample,
                "time_oversample": self.time_oversample}


def residual_norms_values(grid, v, p, r6, space_oversample=1,
                          time_oversample=1, keep_field=False):
    """Residual of d_t v + div(v x v) + grad p - div R on an evaluation grid.

    With oversampling > 1 the fields are trigonometrically resampled and the
    quadratic term is formed on the finer grid, so the returned norms measure
    distance from the continuum balance rather than the same-grid identity
    (which is zero by construction for states assembled on this grid: the
    discrete inverse-divergence is a true right inverse and every aliased
    product is shared between assembly and measurement).
    """
    so, to = int(space_oversample), int(time_oversample)
    if so < 1 or to < 1:
        raise ConfigError("oversampling factors must be >= 1")
    fine = grid if (so == 1 and to == 1) else Grid4(grid.n_space * so,
                                                   grid.n_time * to)
    same = fine is grid

    def up(scalar):
        return scalar if same else resample_values(scalar, grid, fine)

    res = np.zeros((3,) + fine.shape)
    vf = np.empty((3,) + fine.shape)
    for c in range(3):
        vf[c] = up(v[c])
        spec = fft4(vf[c])
        res[c] += ifft4_real(spec * derivative_multiplier(fine, (0, 0, 0, 1)))
        del spec
    for idx, (i, j) in enumerate(_SYM_PAIRS):
        prod = vf[i] * vf[j]
        spec = fft4(prod)
        del prod
        res[i] += ifft4_real(spec * derivative_multiplier(fine, _axis_orders(j)))
        if i != j:
            res[j] += ifft4_real(spec * derivative_multiplier(fine, _axis_orders(i)))
        del spec
    del vf
    spec = fft4(up(p))
    for c in range(3):
        res[c] += ifft4_real(spec * derivative_multiplier(fine, _axis_orders(c)))
    del spec
    for idx, (i, j) in enumerate(_SYM_PAIRS):
        spec = fft4(up(r6[idx]))
        res[i] -= ifft4_real(spec * derivative_multiplier(fine, _axis_orders(j)))
        if i != j:
            res[j] -= ifft4_real(spec * derivative_multiplier(fine, _axis_orders(i)))
        del spec

    sup = float(np.max(np.abs(res)))
    msq = float(np.sqrt(np.mean(np.einsum("c...,c...->...", res, res))))
    norms = ResidualNorms(sup=sup, mean_square=msq, n_space=fine.n_space,
                          n_time=fine.n_time, space_oversample=so,
                          time_oversample=to)
    return (res if keep_field else None), norms


def euler_reynolds_residual(state, space_oversample=1, time_oversample=1,
                            keep_field=False):
    """Residual norms of a velocity/pressure/stress state (see
    residual_norms_values); accepts any object with grid/v/p/r_ring6."""
    return residual_norms_values(state.grid, state.v, state.p, state.r_ring6,
                                 space_oversample=space_oversample,
                                 time_oversample=time_oversample,
                                 keep_field=keep_field)


# ---------------------------------------------------------------------------
# energy band

@dataclass
class EnergyBandReport:
    rows: list
    worst_margin: float
    all_in_band: bool

    def as_dict(self):
        return {"rows": self.rows, "worst_margin": self.worst_margin,
                "all_in_band": self.all_in_band}


def energy_band_check(v_values, energy, delta, grid):
    """Gap e(t) - integral |v|^2 against the band [3/4, 5/4] * delta * e(t).

    The margin is normalized by delta*e(t); the worst (smallest) margin over
    the time samples decides the verdict.
    """
    if not isinstance(energy, EnergyProfile):
        energy = EnergyProfile(energy)
    e_samp = energy.samples(grid)
    sq = np.einsum("c...,c...->...", v_values, v_values)
    gap = e_samp - space_integral(sq, grid)
    scale = delta * e_samp
    lo, hi = 0.75 * scale, 1.25 * scale
    margin = np.minimum(gap - lo, hi - gap) / scale
    rows = [{"t_index": i, "gap": float(gap[i]), "lo": float(lo[i]),
             "hi": float(hi[i]), "margin": float(margin[i]),
             "in_band": bool(margin[i] >= -1e-9)}
            for i in range(gap.size)]
    worst = float(np.min(margin))
    return EnergyBandReport(rows=rows, worst_margin=worst,
                            all_in_band=bool(worst >= -1e-9))


# ---------------------------------------------------------------------------
# spectrum

@dataclass
class SpectrumReport:
    rows: list                      # dicts: n, lam, increment, energy
    slope: float                    # None when too few nonzero points
    intercept: float
    fit_residual: float

    def as_dict(self):
        return {"rows": self.rows, "slope": self.slope,
                "intercept": self.intercept,
                "fit_residual": self.fit_residual}

    def csv_lines(self):
        out = ["n,lambda,E,increment"]
        for r in self.rows:
            out.append(f"{r['n']},{r['lam']:.17g},{r['energy']:.17g},"
                       f"{r['increment']:.17g}")
        return out


def increments_from_states(states):
    """Space-time mean of |v_{n+1} - v_n|^2 for consecutive states."""
    out = []
    for cur, nxt in zip(states, states[1:]):
        diff = nxt.v - cur.v
        out.append(float(np.mean(np.einsum("c...,c...->...", diff, diff))))
    return out


def spectrum_measure(lams, increments):
    """Per-stage energy E = increment / lam and the log-log slope fit.

    Unweighted least squares over the rows with positive energy; rows with
    zero increment are kept in the table but excluded from the fit.
    """
    if len(lams) != len(increments):
        raise ConfigError("one increment per frequency required")
    if len(lams) < 3:
        raise ConfigError("spectrum fit requires at least 3 points")
    rows = []
    for n, (lam, inc) in enumerate(zip(lams, increments)):
        if inc < 0:
            raise ConfigError("mean-square increments cannot be negative")
        rows.append({"n": n, "lam": float(lam), "increment": float(inc),
                     "energy": float(inc / lam)})
    pts = [(math.log(r["lam"]), math.log(r["energy"]))
           for r in rows if r["energy"] > 0.0]
    if len(pts) < 3:
        return SpectrumReport(rows=rows, slope=None, intercept=None,
                              fit_residual=None)
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    coef, stats = np.polynomial.polynomial.polyfit(xs, ys, 1, full=True)
    intercept, slope = float(coef[0]), float(coef[1])
    fitted = intercept + slope * xs
    fit_residual = float(np.max(np.abs(fitted - ys)))
    return SpectrumReport(rows=rows, slope=slope, intercept=intercept,
                          fit_residual=fit_residual)


def schedule_spectrum_points(a, b, c, n_points, n_start=0):
    """Closed-form (lam_n, increment_n) pairs for the amplitude schedule:
    increment delta_n = a**(-b**n) at frequency lam_n = a**((bc+1/2) b**n)."""
    lams, incs = [], []
    for n in range(n_start, n_start + n_points):
        lams.append(float(a) ** ((b * c + 0.5) * float(b) ** n))
        incs.append(float(a) ** (-(float(b) ** n)))
    return lams, incs


# ---------------------------------------------------------------------------
# Hoelder/Cauchy tables

def holder_cauchy_report(states, theta):
    """Measured increment norms and the interpolation bound per stage.

    For each increment: sup norm, C1 norm, the C^theta norm, and the
    interpolated bound sup^(1-theta) * C1^theta; the empirical interpolation
    constant is their ratio.  Consecutive C^theta norms give the measured
    geometric decay factors.
    """
    if len(states) < 2:
        raise ConfigError("need at least two states")
    if not 0.0 < theta < 1.0:
        raise ConfigError("Hoelder exponent must lie in (0, 1)")
    rows = []
    prev_norm = None
    for n, (cur, nxt) in enumerate(zip(states, states[1:])):
        diff = PeriodicField(cur.grid, "vector3", nxt.v - cur.v,
                             _validate=False)
        c0 = sup_norm(diff.values)
        c1 = c1_norm(diff)
        ctheta = holder_norm(diff, theta)
        interp = c0 ** (1.0 - theta) * c1 ** theta if c0 > 0 else 0.0
        row = {"n": n, "c0": c0, "c1": c1, "ctheta": ctheta,
               "interp_bound": interp,
               "interp_constant": (ctheta / interp) if interp > 0 else 0.0,
               "decay_factor": None}
        if prev_norm is not None and prev_norm > 0:
            row["decay_factor"] = ctheta / prev_norm
        prev_norm = ctheta
        rows.append(row)
    factors = [r["decay_factor"] for r in rows if r["decay_factor"] is not None]
    return {"theta": theta, "rows": rows,
            "all_factors_below_one": bool(factors) and all(f < 1.0 for f in factors),
            "decay_factors": factors}


def holder_cauchy_schedule(eps, theta, n_terms=5):
    """Closed-form stage exponents of the C^theta increment sizes.

    Stage n increment in C^theta scales like a**(E * b**n) with
    E = theta*c*b - (1-theta)/2 evaluated exactly; every stage factor shrinks
    iff E < 0, which happens exactly below the attainable exponent bound.
    """
    exponent = velocity_cauchy_exponent(theta, eps)
    bound = theta_bound(eps)
    rows = [{"n": n,
             "log_factor_exponent": float(exponent * Fraction(3, 2) ** n),
             "decays": exponent < 0}
            for n in range(n_terms)]
    return {"theta": str(Fraction(theta)), "exponent": str(exponent),
            "decays": exponent < 0,
            "matches_theta_bound": (exponent < 0) == (Fraction(theta) < bound),
            "rows": rows}


def pressure_c1_track(states, reports, eps, theta=None):
    """Pressure C1 growth per stage against delta^(2+eps) (D/delta_bar^2)^(1+eps).

    The ratio of the measured C1 increment to that combination is the
    empirical prefactor.  With theta given, the C^(2 theta) norms of the
    increments are added for the pressure Cauchy check.
    """
    if len(states) != len(reports) + 1:
        raise ConfigError("need one report per state transition")
    rows = []
    for n, rep in enumerate(reports):
        cur, nxt = states[n], states[n + 1]
        dp = PeriodicField(cur.grid, "scalar", nxt.p - cur.p, _validate=False)
        inc_c1 = c1_norm(dp)
        combo = (rep.delta ** (2.0 + eps)
                 * (rep.d_bound / rep.delta_bar ** 2) ** (1.0 + eps))
        row = {"n": n,
               "p_c1": c1_norm(PeriodicField(cur.grid, "scalar", nxt.p,
                                             _validate=False)),
               "increment_c1": inc_c1,
               "combo": combo,
               "empirical_prefactor": inc_c1 / combo if combo > 0 else 0.0}
        if theta is not None:
            row["increment_c2theta"] = holder_norm(dp, 2.0 * theta)
        rows.append(row)
    return {"eps": eps, "rows": rows}


# ---------------------------------------------------------------------------
# estimate audit

@dataclass
class AuditRow:
    name: str
    measured: float
    combo: float
    ratio: float
    params: dict

    def as_dict(self):
        return {"name": self.name, "measured": self.measured,
                "combo": self.combo, "ratio": self.ratio,
                "params": self.params}


def transport_defect_sup(partition, v_points, mu, k_vectors):
    """Worst transport defect of the phase functions over sample velocities.

    For each parity class the active phase is alpha * exp(-i (k.l/mu) tau),
    so |d_tau phi + i (k.v) phi| = alpha * |k . (v - l/mu)|, independent of
    tau.  Returns the sup over classes, wavevectors, and sample points; the
    advertised scaling is C/mu.
    """
    pts = np.asarray(v_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] != 3:
        raise ConfigError("v_points must have shape (3, N)")
    u = (mu * pts).reshape(3, -1, 1, 1, 1)
    v = pts.reshape(3, -1, 1, 1, 1)
    worst = 0.0
    for jbits in _parity_bits():
        corner, alpha = partition.active_corner(u, jbits)
        offset = v - corner / float(mu)
        for k in k_vectors:
            kv = np.asarray(k, dtype=np.float64).reshape(3, 1, 1, 1, 1)
            defect = np.abs(alpha) * np.abs(np.einsum("c...,c...->...",
                                                      kv, offset))
            worst = max(worst, float(np.max(defect)))
    return worst


def _parity_bits():
    return [(b1, b2, b3) for b1 in (0, 1) for b2 in (0, 1) for b3 in (0, 1)]


def estimate_audit(bundle, params, energy=None, v_values=None,
                   new_stress6=None, stress_c1=None):
    """Constant-stripped audit rows for one correction bundle.

    Each row compares a measured sup against the parameter combination of
    its estimate; the ratio is the empirical constant.  Rows whose inputs
    were not supplied (energy, updated stress) are skipped.  Measured sides
    of an identically zero perturbation are all zero.
    """
    grid = bundle.grid
    delta = params.delta
    lam, mu, ell = float(params.lam), float(params.mu), params.ell
    d = params.d_bound
    alpha = params.alpha
    sq_delta = math.sqrt(delta)
    ptuple = {"delta": params.delta, "delta_bar": params.delta_bar,
              "lam": params.lam, "mu": params.mu, "ell": params.ell,
              "d_bound": params.d_bound, "alpha": alpha}

    def row(name, measured, combo):
        return AuditRow(name=name, measured=float(measured),
                        combo=float(combo),
                        ratio=float(measured / combo) if combo > 0 else 0.0,
                        params=ptuple)

    rows = [
        row("wave_sup", sup_norm(bundle.w_o), sq_delta),
        row("corrector_sup", sup_norm(bundle.w_c),
            sq_delta * d * mu / lam),
        row("total_increment_sup", sup_norm(bundle.w), sq_delta),
        row("coefficient_sup",
            max((r.sup_amplitude for r in bundle.records), default=0.0),
            sq_delta * (1.0 + mu * d * ell)),
    ]
    if energy is not None and v_values is not None:
        if not isinstance(energy, EnergyProfile):
            energy = EnergyProfile(energy)
        e_samp = energy.samples(grid)
        sq = np.einsum("c...,c...->...", v_values, v_values)
        gap_err = np.abs(e_samp * (1.0 - params.delta_bar)
                         - space_integral(sq, grid))
        combo = d * ell + sq_delta * mu * d * lam ** (alpha - 1.0)
        rows.append(row("energy_error", float(np.max(gap_err)), combo))
    if new_stress6 is not None:
        core = (d * ell + sq_delta * d * mu * lam ** (2.0 * alpha - 1.0)
                + sq_delta * lam ** alpha / mu)
        rows.append(row("stress_sup",
                        float(np.max(sym_operator_norms(new_stress6))), core))
        if stress_c1 is not None:
            c1_combo = lam * (sq_delta * d * ell
                              + sq_delta * d * mu * lam ** (2.0 * alpha - 1.0)
                              + sq_delta * lam ** alpha / mu)
            rows.append(row("stress_c1", stress_c1, c1_combo))
    return rows
