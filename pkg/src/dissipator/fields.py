"""Periodic fields on the space-time torus T^3 x S^1 and their spectral calculus.

Layout conventions
------------------
All four axes have period 2*pi.  Sample arrays are indexed (x1, x2, x3, t)
for scalars and (component, x1, x2, x3, t) otherwise.  Symmetric 3x3 tensor
fields store six components in the order xx, yy, zz, xy, xz, yz.
"""

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from . import _fft
from .errors import ConfigError, ResolutionError

TWO_PI = 2.0 * np.pi

RANKS = {"scalar": 1, "vector3": 3, "sym_tensor3": 6}

# (row, col) of each stored symmetric-tensor component
SYM_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class Grid4:
    """Uniform sampling of T^3 x S^1: n_space points per space axis, n_time in time."""

    n_space: int
    n_time: int

    def __post_init__(self):
        if self.n_space % 2 or self.n_space < 8:
            raise ConfigError(f"n_space must be even and >= 8, got {self.n_space}")
        if self.n_time % 2 or self.n_time < 4:
            raise ConfigError(f"n_time must be even and >= 4, got {self.n_time}")

    @property
    def shape(self):
        return (self.n_space, self.n_space, self.n_space, self.n_time)

    def axis_size(self, axis):
        return self.n_time if axis == 3 else self.n_space

    def spacing(self, axis):
        return TWO_PI / self.axis_size(axis)

    def coords(self, axis):
        n = self.axis_size(axis)
        return TWO_PI * np.arange(n) / n

    def times(self):
        return self.coords(3)

    def wavenumbers(self, axis):
        return _fft.wavenumbers(self.axis_size(axis))

    def refined(self, factor_space, factor_time=None):
        if factor_time is None:
            factor_time = factor_space
        return Grid4(self.n_space * factor_space, self.n_time * factor_time)

    @property
    def cell_volume(self):
        return self.spacing(0) ** 3 * self.spacing(3)


class PeriodicField:
    """Real field sampled on a Grid4, with a lazily cached spectrum."""

    def __init__(self, grid, rank, values, _validate=True):
        if rank not in RANKS:
            raise ConfigError(f"unknown rank {rank!r}")
        values = np.asarray(values, dtype=np.float64)
        expected = grid.shape if rank == "scalar" else (RANKS[rank],) + grid.shape
        if values.shape != expected:
            raise ConfigError(
                f"value shape {values.shape} does not match rank {rank} on {grid}"
            )
        if _validate and not np.all(np.isfinite(values)):
            raise ConfigError("field contains non-finite samples")
        self.grid = grid
        self.rank = rank
        self.values = values
        self._spectrum = None

    @classmethod
    def zeros(cls, grid, rank):
        shape = grid.shape if rank == "scalar" else (RANKS[rank],) + grid.shape
        return cls(grid, rank, np.zeros(shape), _validate=False)

    def components(self):
        """View of the samples as (n_components, x1, x2, x3, t)."""
        return self.values.reshape((-1,) + self.grid.shape)

    @property
    def spectrum(self):
        if self._spectrum is None:
            self._spectrum = _fft.fftn(self.components(), axes=(-4, -3, -2, -1))
        return self._spectrum

    def drop_spectrum(self):
        self._spectrum = None

    def copy(self):
        return PeriodicField(self.grid, self.rank, self.values.copy(), _validate=False)


# ---------------------------------------------------------------------------
# raw-array spectral primitives (used directly by the memory-lean pipelines)

def fft4(values):
    return _fft.fftn(values, axes=(-4, -3, -2, -1))


def ifft4_real(spectrum):
    return np.ascontiguousarray(_fft.ifftn(spectrum, axes=(-4, -3, -2, -1)).real)


def axis_wavenumber_view(grid, axis):
    """Wavenumbers along one axis, shaped to broadcast over (x1, x2, x3, t).

    The unpaired Nyquist bin of an even-length axis carries no sign
    information for real samples, so every derivative-type operator treats
    it as frequency zero.  Keeping one convention across derivatives and
    projections preserves their algebraic identities on full-band data.
    """
    k = grid.wavenumbers(axis).astype(np.float64)
    k[k.size // 2] = 0.0
    shape = [1, 1, 1, 1]
    shape[axis] = k.size
    return k.reshape(shape)


def derivative_multiplier(grid, orders):
    """Product of (i*k_axis)**order over the four axes, as a broadcastable array."""
    mult = None
    for axis, order in enumerate(orders):
        if order == 0:
            continue
        factor = (1j * axis_wavenumber_view(grid, axis)) ** order
        mult = factor if mult is None else mult * factor
    if mult is None:
        return np.ones((1, 1, 1, 1))
    return mult


def spectral_derivative_values(values, grid, orders):
    return ifft4_real(fft4(values) * derivative_multiplier(grid, orders))


def derivative(field, axis, order=1):
    """Spectral partial derivative along one axis (0..2 space, 3 time)."""
    if axis not in (0, 1, 2, 3):
        raise ConfigError(f"axis must be 0..3, got {axis}")
    orders = [0, 0, 0, 0]
    orders[axis] = int(order)
    out = spectral_derivative_values(field.values, field.grid, orders)
    return PeriodicField(field.grid, field.rank, out, _validate=False)


def sup_norm(field_or_values):
    values = getattr(field_or_values, "values", field_or_values)
    return float(np.max(np.abs(values))) if values.size else 0.0


def space_integral(field_or_values, grid=None):
    """Integral over T^3, one value per time sample.

    For vector/tensor ranks the integrand is the squared pointwise magnitude
    summed over components is NOT implied; this integrates each sample array
    as given, so pass a scalar field (e.g. |v|^2 assembled by the caller).
    """
    values = getattr(field_or_values, "values", field_or_values)
    if values.ndim != 4:
        raise ConfigError("space_integral expects scalar samples (x1,x2,x3,t)")
    return values.mean(axis=(0, 1, 2)) * TWO_PI ** 3


def space_time_mean(values):
    return float(np.mean(values))


def squared_magnitude(field):
    """Pointwise |f|^2 summed over components, as raw samples."""
    comps = field.components()
    return np.einsum("c...,c...->...", comps, comps)


# ---------------------------------------------------------------------------
# symmetric-tensor helpers

def sym_matvec(t6, v3):
    """Apply a sym_tensor3 sample block to a vector3 sample block."""
    xx, yy, zz, xy, xz, yz = t6
    return np.stack([
        xx * v3[0] + xy * v3[1] + xz * v3[2],
        xy * v3[0] + yy * v3[1] + yz * v3[2],
        xz * v3[0] + yz * v3[1] + zz * v3[2],
    ])


def sym_outer(u3, v3):
    """Symmetrized outer product u (x) v + v (x) u, six components."""
    return np.stack([
        2.0 * u3[0] * v3[0],
        2.0 * u3[1] * v3[1],
        2.0 * u3[2] * v3[2],
        u3[0] * v3[1] + u3[1] * v3[0],
        u3[0] * v3[2] + u3[2] * v3[0],
        u3[1] * v3[2] + u3[2] * v3[1],
    ])


def trace6(t6):
    return t6[0] + t6[1] + t6[2]


def deviatoric_exact(t6):
    """Remove the trace so that xx + yy + zz sums to an exact float zero.

    The zz component is rebuilt as -(xx + yy) after centering; the deviation
    from the true deviatoric is at most one ulp.
    """
    out = np.array(t6, dtype=np.float64, copy=True)
    m = trace6(out) / 3.0
    out[0] -= m
    out[1] -= m
    out[2] = -(out[0] + out[1])
    return out


def sym_operator_norms(t6):
    """Pointwise spectral (operator) norm of a symmetric tensor field."""
    mats = np.empty(t6.shape[1:] + (3, 3))
    for c, (i, j) in enumerate(SYM_INDEX):
        mats[..., i, j] = t6[c]
        if i != j:
            mats[..., j, i] = t6[c]
    eig = np.linalg.eigvalsh(mats)
    return np.abs(eig).max(axis=-1)


# ---------------------------------------------------------------------------
# mollification

_MOLLIFIER_CACHE = {}


def mollifier_multiplier(grid, ell):
    """Fourier symbol of the compact 4-ball bump of radius ell, unit mass."""
    if not 0.0 < ell < np.pi:
        raise ConfigError(f"mollifier scale must lie in (0, pi), got {ell}")
    key = (grid.n_space, grid.n_time, float(ell))
    if key in _MOLLIFIER_CACHE:
        return _MOLLIFIER_CACHE[key]
    # fold coordinates to [-pi, pi) so the compact support sits at the origin
    def folded(axis):
        c = grid.coords(axis)
        return np.where(c > np.pi, c - TWO_PI, c)

    x1 = folded(0)[:, None, None, None]
    x2 = folded(1)[None, :, None, None]
    x3 = folded(2)[None, None, :, None]
    t = folded(3)[None, None, None, :]
    s2 = (x1 ** 2 + x2 ** 2 + x3 ** 2 + t ** 2) / ell ** 2
    with np.errstate(divide="ignore", over="ignore"):
        kernel = np.where(s2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - s2, 1e-300)), 0.0)
    total = kernel.sum()
    if total <= 0.0:
        raise ResolutionError(
            f"mollifier of scale {ell} has no support on a "
            f"{grid.n_space}^3 x {grid.n_time} grid"
        )
    mult = _fft.fftn(kernel)
    mult /= mult[0, 0, 0, 0]
    if len(_MOLLIFIER_CACHE) > 8:
        _MOLLIFIER_CACHE.clear()
    _MOLLIFIER_CACHE[key] = mult
    return mult


def mollify_values(values, grid, ell):
    mult = mollifier_multiplier(grid, ell)
    return ifft4_real(fft4(values) * mult)


def mollify(field, ell):
    """Convolve with the space-time bump of scale ell (executed spectrally)."""
    out = mollify_values(field.values, field.grid, ell)
    return PeriodicField(field.grid, field.rank, out, _validate=False)


# ---------------------------------------------------------------------------
# Hoelder seminorms and norms

@dataclass
class HolderEstimate:
    """Grid estimate of a Hoelder seminorm (a converging lower bound)."""

    value: float
    order: float
    domain: str
    n_space: int
    n_time: int
    consistent: bool


def _multi_indices(order, axes):
    seen = []
    for combo in combinations_with_replacement(axes, order):
        orders = [0, 0, 0, 0]
        for a in combo:
            orders[a] += 1
        seen.append(tuple(orders))
    return seen or [(0, 0, 0, 0)]


def _fractional_sup(gvals, grid, axes, alpha):
    """sup over grid-aligned dyadic offsets of |g(x+h) - g(x)| / |h|^alpha.

    Returns (best, best_excluding_smallest_offset).
    """
    best = 0.0
    best_coarse = 0.0
    for axis in axes:
        n = grid.axis_size(axis)
        h = grid.spacing(axis)
        arr_axis = axis + (gvals.ndim - 4)
        s = 1
        while s <= n // 2:
            diff = np.max(np.abs(np.roll(gvals, s, axis=arr_axis) - gvals))
            val = diff / (s * h) ** alpha
            best = max(best, val)
            if s > 1:
                best_coarse = max(best_coarse, val)
            s *= 2
    return best, best_coarse


def holder_seminorm(field, r, domain="space"):
    """Seminorm [f]_r: max sup-norm of order-m derivatives, plus a fractional
    difference quotient when r = m + alpha is non-integer.

    domain selects spatial derivatives/offsets only ("space", the default,
    with the sup still taken over all time samples) or all four axes
    ("spacetime").
    """
    if r < 0:
        raise ConfigError("Hoelder order must be >= 0")
    if domain not in ("space", "spacetime"):
        raise ConfigError(f"unknown domain {domain!r}")
    axes = (0, 1, 2) if domain == "space" else (0, 1, 2, 3)
    m = int(np.floor(r + 1e-12))
    alpha = r - m
    if alpha < 1e-12:
        alpha = 0.0
    grid = field.grid
    spec = None
    value = 0.0
    coarse = 0.0
    for orders in _multi_indices(m, axes):
        if m == 0:
            g = field.values
        else:
            if spec is None:
                spec = fft4(field.values)
            g = ifft4_real(spec * derivative_multiplier(grid, orders))
        if alpha == 0.0:
            value = max(value, float(np.max(np.abs(g))))
        else:
            b, bc = _fractional_sup(g, grid, axes, alpha)
            value = max(value, b)
            coarse = max(coarse, bc)
    if alpha == 0.0:
        consistent = True
    else:
        consistent = value == 0.0 or coarse >= 0.5 * value
    return HolderEstimate(float(value), float(r), domain, grid.n_space,
                          grid.n_time, bool(consistent))


def holder_norm(field, r, domain="space"):
    """Norm ||f||_r = sum of integer seminorms up to floor(r), plus [f]_r."""
    m = int(np.floor(r + 1e-12))
    total = sum(holder_seminorm(field, j, domain).value for j in range(m + 1))
    if r - m > 1e-12:
        total += holder_seminorm(field, r, domain).value
    return total


def c1_norm(field, domain="spacetime"):
    """||f||_0 + max over first partials of ||df||_0."""
    return holder_seminorm(field, 0, domain).value + holder_seminorm(field, 1, domain).value


@dataclass
class InterpolationCheck:
    lhs: float
    rhs: float
    ratio: float


def interpolate_norm(field, s, r, domain="space"):
    """Measure [f]_s against ||f||_0^(1-s/r) [f]_r^(s/r) (constant stripped)."""
    if not 0 <= s <= r or r <= 0:
        raise ConfigError("need 0 <= s <= r with r > 0")
    lhs = holder_seminorm(field, s, domain).value
    f0 = holder_seminorm(field, 0, domain).value
    fr = holder_seminorm(field, r, domain).value
    rhs = f0 ** (1.0 - s / r) * fr ** (s / r)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else np.inf)
    return InterpolationCheck(float(lhs), float(rhs), float(ratio))


# ---------------------------------------------------------------------------
# resampling between grids (zero-padding / truncation of modes)

def resample_values(values, grid_src, grid_dst):
    """Trigonometric upsampling of samples onto a finer (or equal) grid.

    Exact for content strictly inside the source band; the source Nyquist
    bins are dropped (they are ambiguous on the coarse grid anyway), so feed
    this band-limited data only.
    """
    src_sizes = grid_src.shape
    dst_sizes = grid_dst.shape
    for axis in range(4):
        if dst_sizes[axis] < src_sizes[axis]:
            raise ConfigError("resample only refines; destination grid is coarser")
    spec = fft4(values)
    lead = spec.shape[:-4]
    out = np.zeros(lead + grid_dst.shape, dtype=complex)
    idx = []
    for axis in range(4):
        k = _fft.wavenumbers(src_sizes[axis])
        keep = np.abs(k) < src_sizes[axis] // 2  # drop the Nyquist bin
        idx.append((k[keep], np.where(k[keep] >= 0, k[keep], dst_sizes[axis] + k[keep])))
    src_mesh = np.ix_(*[np.where(i[0] >= 0, i[0], src_sizes[a] + i[0])
                        for a, i in enumerate(idx)])
    dst_mesh = np.ix_(*[i[1] for i in idx])
    if lead:
        out[(slice(None),) + dst_mesh] = spec[(slice(None),) + src_mesh]
    else:
        out[dst_mesh] = spec[src_mesh]
    scale = 1.0
    for axis in range(4):
        scale *= dst_sizes[axis] / src_sizes[axis]
    return np.ascontiguousarray(_fft.ifftn(out, axes=(-4, -3, -2, -1)).real * scale)


def resample(field, grid_dst):
    vals = resample_values(field.values, field.grid, grid_dst)
    return PeriodicField(grid_dst, field.rank, vals, _validate=False)


def spectral_band(values, grid, rel_tol=1e-12):
    """Largest per-axis |wavenumber| carrying more than rel_tol of the peak."""
    spec = np.abs(fft4(values))
    peak = spec.max()
    if peak == 0.0:
        return (0, 0, 0, 0)
    bands = []
    for axis in range(4):
        k = np.abs(grid.wavenumbers(axis))
        other = tuple(a for a in range(spec.ndim) if a != axis + (spec.ndim - 4))
        profile = spec.max(axis=other)
        active = profile > rel_tol * peak
        bands.append(int(k[active].max()) if active.any() else 0)
    return tuple(bands)


_BAND_MASK_CACHE = {}


def _band_mask(grid, band):
    """Combined |k_i| <= band cutoff for the 4-axis half spectrum, or None
    when every mode passes."""
    key = (grid.n_space, grid.n_time, band)
    if key in _BAND_MASK_CACHE:
        return _BAND_MASK_CACHE[key]
    mask = None
    for axis in range(4):
        if axis == 3:
            k = np.arange(grid.n_time // 2 + 1)
        else:
            k = np.abs(grid.wavenumbers(axis))
        if k.max() <= band:
            continue
        sl = [1, 1, 1, 1]
        sl[axis] = k.size
        ax_mask = (k <= band).astype(float).reshape(sl)
        mask = ax_mask if mask is None else mask * ax_mask
    _BAND_MASK_CACHE[key] = mask
    return mask


def random_band_limited(grid, rank, band, seed, zero_mean=False):
    """Random real field with spectrum confined to |k_i| <= band on each axis.

    Works on the half-spectrum of the real input (last axis), which gives the
    same field as a two-sided transform would: the band mask is even in k.
    """
    rng = np.random.default_rng(seed)
    shape = grid.shape if rank == "scalar" else (RANKS[rank],) + grid.shape
    white = rng.standard_normal(shape)
    all_axes = (-4, -3, -2, -1)
    spec = _fft.rfftn(white, axes=all_axes)
    mask = _band_mask(grid, band)
    if mask is not None:
        spec *= mask
    if zero_mean:
        spec[..., 0, 0, 0, :] = 0.0
    vals = _fft.irfftn(spec, s=grid.shape, axes=all_axes)
    np.divide(vals, max(np.max(np.abs(vals)), 1e-300), out=vals)
    return PeriodicField(grid, rank, vals, _validate=False)
