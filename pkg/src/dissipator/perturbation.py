"""Assembly of the oscillatory velocity correction and the updated state.

One correction step takes a state (v, p, stress) plus a prescribed kinetic
energy profile and produces (v_1, p_1, stress_1):

  w_o   amplitude-modulated curl eigenwaves carrying the missing energy,
  w_c   = -(Id - P) w_o, the small fix making the correction divergence-free,
  v_1   = v + w_o + w_c,
  p_1   = p - |w_o|^2/2 - (2/3) <v - v_smooth, w>,
  new stress = the four-line combination of inverse divergences and
               mollification differences that keeps the system exact.

Everything here works on raw component arrays to keep peak memory low on
large grids; thin wrappers return PeriodicField objects.
"""

import itertools
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError, NumericalAbort, ResolutionError
from . import _fft
from .beltrami import GammaSolver, PhasePartition
from .fields import (
    TWO_PI,
    PeriodicField,
    deviatoric_exact,
    fft4,
    ifft4_real,
    derivative_multiplier,
    space_integral,
)
from .operators import (
    inverse_divergence_values,
    leray_project_values,
    q_complement_values,
    sym_divergence_values,
)


# ---------------------------------------------------------------------------
# energy profiles

class EnergyProfile:
    """Prescribed total kinetic energy e(t) > 0 on the time circle.

    Accepts a positive constant, an array of uniform samples over [0, 2 pi),
    or a callable of t. Samples are moved between grids by trigonometric
    interpolation so refining a grid never changes the profile.
    """

    def __init__(self, spec):
        self._callable = None
        self._samples = None
        if callable(spec):
            self._callable = spec
        elif np.isscalar(spec):
            if spec <= 0:
                raise ConfigError("energy profile must be positive")
            self._callable = lambda t, c=float(spec): c + 0.0 * np.asarray(t)
        else:
            arr = np.asarray(spec, dtype=np.float64)
            if arr.ndim != 1 or arr.size < 2:
                raise ConfigError("energy samples must be a 1-d array")
            self._samples = arr
        if np.min(self.dense_samples(512)) <= 0:
            raise ConfigError("energy profile must stay positive")

    def at(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self._callable is not None:
            return np.asarray(self._callable(t), dtype=np.float64) + 0.0 * t
        n = self._samples.size
        k = _fft.wavenumbers(n).astype(np.float64)
        coef = _fft.fft(self._samples) / n
        # one-dimensional trigonometric interpolation; even sample counts
        # carry an unpaired Nyquist bin that must be dropped, odd ones do not
        keep = np.abs(k) < (n + 1) // 2
        vals = np.real(coef[keep][:, None] * np.exp(1j * np.outer(k[keep], t))).sum(axis=0)
        return vals

    def samples(self, grid):
        return self.at(grid.times())

    def dense_samples(self, n=512):
        return self.at(TWO_PI * np.arange(n) / n)

    def bounds(self):
        d = self.dense_samples(512)
        return float(np.min(d)), float(np.max(d))


# ---------------------------------------------------------------------------
# scalar amplitude profile

def compute_rho(energy_samples, v_ell_values, grid, delta_bar):
    """Spatial energy-density headroom rho(t) left for the correction."""
    e = np.asarray(energy_samples, dtype=np.float64)
    if e.shape != (grid.n_time,):
        raise ConfigError("energy samples must match the time axis")
    if v_ell_values is None:
        kinetic = np.zeros(grid.n_time)
    else:
        sq = np.einsum("c...,c...->...", v_ell_values, v_ell_values)
        kinetic = space_integral(sq, grid)
    rho = (e * (1.0 - delta_bar) - kinetic) / (3.0 * TWO_PI ** 3)
    if np.min(rho) <= 0.0:
        raise NumericalAbort(
            f"no energy headroom: min rho = {np.min(rho):.6e}; "
            "the profile must stay above the current kinetic energy"
        )
    return rho


def compose_stress_target(rho, r_ell6, grid):
    """Normalized target R_l / rho = Id - ring / rho, six components."""
    shape = (6,) + grid.shape
    out = np.zeros(shape)
    out[0] = out[1] = out[2] = 1.0
    if r_ell6 is not None:
        out = out - r_ell6 / rho
    return out


# ---------------------------------------------------------------------------
# wave assembly

@dataclass
class ModeRecord:
    k: tuple
    class_bits: tuple
    family: int
    sup_amplitude: float


@dataclass
class CorrectorCheck:
    route_direct_sup: float
    route_potential_sup: float
    disagreement: float
    tolerance: float

    @property
    def agrees(self):
        return self.disagreement <= self.tolerance


@dataclass
class PerturbationBundle:
    grid: object
    lam: int
    mu: int
    rho: np.ndarray
    w_o: np.ndarray
    w_c: np.ndarray
    records: list = dc_field(default_factory=list)
    corrector: CorrectorCheck = None

    @property
    def w(self):
        return self.w_o + self.w_c

    def w_o_field(self):
        return PeriodicField(self.grid, "vector3", self.w_o, _validate=False)

    def w_field(self):
        return PeriodicField(self.grid, "vector3", self.w, _validate=False)


def _mode_phase_x(grid, lam_k):
    """e^{i lam k . x} on the space grid, shape (nx, nx, nx, 1)."""
    x1 = grid.coords(0)[:, None, None]
    x2 = grid.coords(1)[None, :, None]
    x3 = grid.coords(2)[None, None, :]
    ph = np.exp(1j * (lam_k[0] * x1 + lam_k[1] * x2 + lam_k[2] * x3))
    return ph[..., None]


def _check_wave_band(grid, basis, lam):
    kmax = max(max(abs(c) for c in v)
               for cert in basis.certificates for v in cert.vectors)
    band = lam * kmax
    if band > grid.n_space // 2 - 1:
        raise ResolutionError(
            f"wave band {band} exceeds the grid (needs n_space >= {2 * band + 2})"
        )


def build_waves(grid, basis, partition, lam, mu, rho, v_ell_values=None,
                r_ell6=None, with_corrector_dual=False, tol_scale=1.0):
    """Accumulate the oscillatory correction w_o (and optionally the
    corrector potential integrand u_c) over all parity classes and
    wavevectors.

    rho: (n_time,) positive amplitudes; v_ell_values: (3,)+grid.shape or None
    for an identically zero transport velocity; r_ell6: smoothed stress
    components or None when the stress vanishes.

    Returns (w_o, u_c_or_None, records).
    """
    if int(lam) != lam or lam < 1:
        raise ConfigError("lam must be a positive integer")
    if int(mu) != mu or mu < 1 or lam % mu:
        raise ConfigError("mu must be a positive integer dividing lam")
    _check_wave_band(grid, basis, lam)
    rho = np.asarray(rho, dtype=np.float64)
    if np.min(rho) <= 0:
        raise NumericalAbort("wave amplitude requires positive rho")
    sqrt_rho = np.sqrt(rho)                      # (nt,) broadcast over time
    tau = lam * grid.times()                     # (nt,)

    zero_velocity = v_ell_values is None
    if zero_velocity:
        u_scaled = np.zeros((3, 1, 1, 1, 1))
    else:
        u_scaled = mu * np.asarray(v_ell_values, dtype=np.float64)
    psi = partition.cell_weight_sum(u_scaled)

    constant_target = r_ell6 is None
    records = []
    w_o = np.zeros((3,) + grid.shape)
    u_c = np.zeros((3,) + grid.shape) if with_corrector_dual else None
    x_phase_cache = {}

    # group parity classes by family so only one gamma field is live at a time
    by_family = {}
    for bits in itertools.product((0, 1), repeat=3):
        f = basis.class_to_family[bits[0] + 2 * bits[1] + 4 * bits[2]]
        by_family.setdefault(f, []).append(bits)

    for fam_index, class_list in sorted(by_family.items()):
        cert = basis.certificates[fam_index]
        solver = GammaSolver(cert)
        if constant_target:
            gamma = np.sqrt(cert.weights_at_id)          # (6,) scalars
        else:
            target = compose_stress_target(rho, r_ell6, grid)
            gamma = solver.gamma(target, tol_scale=tol_scale)   # (6,)+shape
            del target
        for bits in class_list:
            corner, alpha = partition.active_corner(u_scaled, bits, psi=psi)
            for idx, k in enumerate(cert.vectors):
                kv = np.asarray(k, dtype=np.float64)
                kdotl = np.einsum("i,i...->...", kv, corner)
                # a_k = sqrt(rho) gamma_k alpha e^{-i (k.l/mu) tau}
                amp = sqrt_rho * (gamma[idx] * alpha)
                sup_amp = float(np.max(np.abs(amp)))
                records.append(ModeRecord(tuple(k), bits, fam_index, sup_amp))
                if sup_amp == 0.0:
                    continue
                a_k = amp * np.exp(-1j * (kdotl / mu) * tau)
                lam_k = tuple(lam * c for c in k)
                if lam_k not in x_phase_cache:
                    x_phase_cache[lam_k] = _mode_phase_x(grid, lam_k)
                mode = a_k * x_phase_cache[lam_k]
                b = basis.direction(k)
                for c in range(3):
                    w_o[c] += 2.0 * (mode.real * b[c].real - mode.imag * b[c].imag)
                if with_corrector_dual:
                    _accumulate_corrector(u_c, a_k, x_phase_cache[lam_k], kv, b,
                                          grid, lam)
                del a_k, mode
            del corner, alpha
        del gamma
    return w_o, u_c, records


def _accumulate_corrector(u_c, a_k, x_phase, kv, b, grid, lam):
    """Add 2 Re[ i grad(a_k) x (k x B_k)/|k|^2 e^{i lam k.x} ] to u_c.

    The gradient of the slow amplitude is taken spectrally, direction by
    direction; this is the independent route to the corrector, exercised
    against -(Id - P) w_o by the bundle check.
    """
    if a_k.shape[:3] == (1, 1, 1):
        return                      # amplitude constant in space: no gradient
    m = np.cross(kv, b) / np.dot(kv, kv)
    spec = fft4(a_k)
    grads = []
    for axis in range(3):
        orders = [0, 0, 0, 0]
        orders[axis] = 1
        da = _fft.ifftn(spec * derivative_multiplier(grid, orders),
                        axes=(-4, -3, -2, -1))
        grads.append(da)
    del spec
    # i (grad a x m): component c = i sum eps_{cde} d_d a m_e
    eps_terms = {0: ((1, 2, 1.0), (2, 1, -1.0)),
                 1: ((2, 0, 1.0), (0, 2, -1.0)),
                 2: ((0, 1, 1.0), (1, 0, -1.0))}
    for c in range(3):
        acc = None
        for (d, e, sign) in eps_terms[c]:
            term = sign * grads[d] * m[e]
            acc = term if acc is None else acc + term
        full = 1j * acc * x_phase
        u_c[c] += 2.0 * full.real
        del acc, full


def build_corrector(w_o_values, grid):
    """Direct route: w_c = -(Id - P) w_o."""
    return -q_complement_values(w_o_values, grid)


def corrector_from_potential(u_c_values, grid, lam):
    """Potential route: w_c = (1/lam) (Id - P) u_c."""
    return q_complement_values(u_c_values, grid) / float(lam)


def build_perturbation(grid, basis, partition, lam, mu, rho,
                       v_ell_values=None, r_ell6=None, corrector_check=True,
                       corrector_tol=1e-8, tol_scale=1.0):
    """Full correction bundle, with the two corrector routes compared.

    A disagreement beyond corrector_tol (relative to the wave amplitude)
    indicates aliased amplitude content on this grid.
    """
    w_o, u_c, records = build_waves(
        grid, basis, partition, lam, mu, rho, v_ell_values, r_ell6,
        with_corrector_dual=corrector_check, tol_scale=tol_scale)
    w_c = build_corrector(w_o, grid)
    check = None
    if corrector_check:
        alt = corrector_from_potential(u_c, grid, lam)
        scale = max(float(np.max(np.abs(w_o))), 1e-300)
        dis = float(np.max(np.abs(alt - w_c))) / scale
        check = CorrectorCheck(
            route_direct_sup=float(np.max(np.abs(w_c))),
            route_potential_sup=float(np.max(np.abs(alt))),
            disagreement=dis,
            tolerance=corrector_tol,
        )
        del alt
    del u_c
    return PerturbationBundle(grid, int(lam), int(mu), rho, w_o, w_c,
                              records, check)


# ---------------------------------------------------------------------------
# updated pressure and stress

def build_new_pressure(p_values, w_o_values, w_values, v_values, v_ell_values,
                       grid):
    """p_1 = p - |w_o|^2 / 2 - (2/3) <v - v_smooth, w>."""
    out = np.array(p_values, copy=True) if p_values is not None else np.zeros(grid.shape)
    out -= 0.5 * np.einsum("c...,c...->...", w_o_values, w_o_values)
    if v_values is not None or v_ell_values is not None:
        dv = _difference(v_values, v_ell_values, grid)
        out -= (2.0 / 3.0) * np.einsum("c...,c...->...", dv, w_values)
    return out


def _difference(a, b, grid, ncomp=3):
    if a is None and b is None:
        return np.zeros((ncomp,) + grid.shape)
    if a is None:
        return -np.asarray(b)
    if b is None:
        return np.asarray(a)
    return np.asarray(a) - np.asarray(b)


def assemble_new_stress(grid, w_values, w_o_values, v_values, v_ell_values,
                        r_ring6, r_ell_ring6):
    """The four-line stress update; returns six components with the trace
    summing to an exact float zero.

      line 1: Rinv[ d_t w + div(w (x) v_l + v_l (x) w) ]
      line 2: Rinv[ div(w (x) w + ring_l - (|w_o|^2/2) Id) ]
      line 3: w (x) (v - v_l) + (v - v_l) (x) w - (2/3) <v - v_l, w> Id
      line 4: ring - ring_l
    """
    nt_w = w_values
    # --- line 1 source: d_t w + div(w (x) v_l + v_l (x) w)
    f1 = _time_derivative(nt_w, grid)
    if v_ell_values is not None:
        f1 += _sym_product_divergence(nt_w, v_ell_values, grid)
    line1 = inverse_divergence_values(f1, grid)
    del f1
    # --- line 2 source: div(w (x) w + ring_l - (|w_o|^2/2) Id)
    t6 = _sym_outer_with_trace_term(nt_w, w_o_values, r_ell_ring6, grid)
    f2 = sym_divergence_values(t6, grid)
    del t6
    line2 = inverse_divergence_values(f2, grid)
    del f2
    out = line1
    out += line2
    del line2
    # --- line 3
    dv = _difference(v_values, v_ell_values, grid)
    if np.any(dv):
        inner = np.einsum("c...,c...->...", dv, nt_w)
        out[0] += 2.0 * dv[0] * nt_w[0] - (2.0 / 3.0) * inner
        out[1] += 2.0 * dv[1] * nt_w[1] - (2.0 / 3.0) * inner
        out[2] += 2.0 * dv[2] * nt_w[2] - (2.0 / 3.0) * inner
        out[3] += dv[0] * nt_w[1] + dv[1] * nt_w[0]
        out[4] += dv[0] * nt_w[2] + dv[2] * nt_w[0]
        out[5] += dv[1] * nt_w[2] + dv[2] * nt_w[1]
        del inner
    del dv
    # --- line 4
    if r_ring6 is not None:
        out += r_ring6
    if r_ell_ring6 is not None:
        out -= r_ell_ring6
    return deviatoric_exact(out)


def _time_derivative(vec_values, grid):
    out = np.empty_like(vec_values)
    mult = derivative_multiplier(grid, (0, 0, 0, 1))
    for c in range(vec_values.shape[0]):
        out[c] = ifft4_real(fft4(vec_values[c]) * mult)
    return out


def _sym_product_divergence(w, v, grid):
    """div of w (x) v + v (x) w, streamed one product at a time."""
    from .fields import spectral_derivative_values

    out = np.zeros_like(w)
    for i in range(3):
        for j in range(3):
            prod = w[i] * v[j] + v[i] * w[j]
            orders = [0, 0, 0, 0]
            orders[j] = 1
            out[i] += spectral_derivative_values(prod, grid, orders)
            del prod
    return out


def _sym_outer_with_trace_term(w, w_o, r_ell_ring6, grid):
    """w (x) w + ring_l - (|w_o|^2/2) Id, six components."""
    out = np.empty((6,) + grid.shape)
    half_sq = 0.5 * np.einsum("c...,c...->...", w_o, w_o)
    out[0] = w[0] * w[0] - half_sq
    out[1] = w[1] * w[1] - half_sq
    out[2] = w[2] * w[2] - half_sq
    out[3] = w[0] * w[1]
    out[4] = w[0] * w[2]
    out[5] = w[1] * w[2]
    del half_sq
    if r_ell_ring6 is not None:
        out += r_ell_ring6
    return out


# ---------------------------------------------------------------------------
# oscillation mean diagnostics

def oscillation_mean_check(w_values, grid, rho, r_ell6=None, cutoff=0):
    """Compare the slow part of w (x) w with the designed mean rho Id - ring.

    cutoff 0 keeps only the spatial mean per time sample (the right choice
    when the amplitudes carry no spatial dependence); returns the worst
    absolute deviation over components and samples.
    """
    from .operators import slow_average_values

    worst = 0.0
    pairs = ((0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 0, 1), (4, 0, 2), (5, 1, 2))
    for comp, i, j in pairs:
        prod = w_values[i] * w_values[j]
        slow = slow_average_values(prod, grid, cutoff)
        want = rho if i == j else 0.0
        if r_ell6 is not None:
            want = want - r_ell6[comp]
        worst = max(worst, float(np.max(np.abs(slow - want))))
        del prod, slow
    return worst
