"""Spectral vector-calculus operators on T^3: projections, inverse divergence,
oscillatory integrals.

All operators act per time sample; the time axis is never transformed here.
Raw-array variants (suffix ``_values``) exist so large pipelines can stream
components without building PeriodicField wrappers.
"""

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _fft
from .errors import ConfigError, NumericalAbort
from .fields import (
    PeriodicField,
    Grid4,
    random_band_limited,
    axis_wavenumber_view,
)

SPACE_AXES = (-4, -3, -2)

# Real input lets the last spatial axis use the half-spectrum transform; the
# stored modes k3 >= 0 determine the k3 < 0 ones by conjugation, and every
# multiplier below satisfies m(-k) = conj(m(k)), so the results are identical
# to the two-sided transform at half the cost.


def _space_fft(values):
    return _fft.rfftn(values, axes=SPACE_AXES)


def _space_ifft_real(spec, grid):
    n = grid.n_space
    return _fft.irfftn(spec, s=(n, n, n), axes=SPACE_AXES)


class _Meshes:
    """Wavenumber views and per-mode operator matrices for one grid size,
    in the half-spectrum layout.

    Each spectral operator here is a constant matrix per mode, so applying
    it is one batched matmul over the mode grid -- far cheaper than chains
    of full-array broadcast products.  Matrices are built on first use and
    shared; they are a few MB per grid.
    """

    def __init__(self, grid):
        k1 = axis_wavenumber_view(grid, 0)
        k2 = axis_wavenumber_view(grid, 1)
        half = np.arange(grid.n_space // 2 + 1, dtype=np.float64)
        half[-1] = 0.0  # unpaired Nyquist bin, same convention as full views
        k3 = half.reshape(1, 1, -1, 1)
        self.k = (k1, k2, k3)
        self.jk = tuple(1j * k for k in self.k)
        k_sq = k1 ** 2 + k2 ** 2 + k3 ** 2
        inv = np.zeros_like(k_sq)
        np.divide(1.0, k_sq, out=inv, where=k_sq > 0)
        self.inv_k2 = inv
        self.kinv = tuple(k * inv for k in self.k)
        null = k_sq == 0.0
        self.null = null
        self.null_ix = np.nonzero(null[..., 0])
        self.pix_shape = k_sq.shape[:3]
        self._mats = {}

    def _pixel_k(self):
        shape = self.pix_shape
        return [np.broadcast_to(v[..., 0], shape) for v in self.k]

    def op_matrix(self, name):
        mat = self._mats.get(name)
        if mat is not None:
            return mat
        shape = self.pix_shape
        K = self._pixel_k()
        inv = np.broadcast_to(self.inv_k2[..., 0], shape)
        if name == "leray":
            # P_ij = delta_ij - k_i k_j / |k|^2, annihilated bins killed
            mat = np.zeros(shape + (3, 3), dtype=np.complex128)
            for i in range(3):
                for j in range(3):
                    mat[..., i, j] = (i == j) - K[i] * K[j] * inv
            mat[self.null_ix] = 0.0
        elif name == "qcomp":
            # Id - P: the gradient part plus every annihilated bin
            mat = np.zeros(shape + (3, 3), dtype=np.complex128)
            for i in range(3):
                for j in range(3):
                    mat[..., i, j] = K[i] * K[j] * inv
            mat[self.null_ix] = np.eye(3)
        elif name == "div":
            mat = np.zeros(shape + (1, 3), dtype=np.complex128)
            for j in range(3):
                mat[..., 0, j] = 1j * K[j]
        elif name == "grad":
            mat = np.zeros(shape + (3, 1), dtype=np.complex128)
            for i in range(3):
                mat[..., i, 0] = 1j * K[i]
        elif name == "curl":
            mat = np.zeros(shape + (3, 3), dtype=np.complex128)
            mat[..., 0, 2] = 1j * K[1]
            mat[..., 0, 1] = -1j * K[2]
            mat[..., 1, 0] = 1j * K[2]
            mat[..., 1, 2] = -1j * K[0]
            mat[..., 2, 1] = 1j * K[0]
            mat[..., 2, 0] = -1j * K[1]
        elif name == "symdiv":
            # rows of div acting on (xx, yy, zz, xy, xz, yz)
            mat = np.zeros(shape + (3, 6), dtype=np.complex128)
            for i, cols in enumerate(((0, 3, 4), (3, 1, 5), (4, 5, 2))):
                for kj, col in zip(K, cols):
                    mat[..., i, col] = 1j * kj
        elif name == "invdiv":
            # S(k) = a (k (x) F + F (x) k) + b (F.k) k (x) k + c (F.k) Id
            a = -1j * inv
            b = 0.5j * inv ** 2
            c = 0.5j * inv
            pairs = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
            mat = np.zeros(shape + (6, 3), dtype=np.complex128)
            for comp, (i, j) in enumerate(pairs):
                for l in range(3):
                    term = a * (K[i] * (l == j) + K[j] * (l == i))
                    term = term + b * K[i] * K[j] * K[l]
                    if i == j:
                        term = term + c * K[l]
                    mat[..., comp, l] = term
        else:
            raise KeyError(name)
        self._mats[name] = mat
        return mat


_MESH_CACHE = {}


def _meshes(grid):
    key = (grid.n_space, grid.n_time)
    hit = _MESH_CACHE.get(key)
    if hit is None:
        hit = _Meshes(grid)
        _MESH_CACHE[key] = hit
    return hit


def _apply_mode_matrix(spec, mat):
    """Batched per-mode matmul: (c_in, x1, x2, k3, t) -> (c_out, ...).

    Writes straight into a component-first contiguous buffer so the inverse
    transform that follows never sees a strided view.
    """
    if spec.ndim == 4:  # scalar input
        sp = spec[..., None, :]
    else:
        sp = np.moveaxis(spec, 0, 3)
    out = np.empty((mat.shape[-2],) + spec.shape[-4:], dtype=np.complex128)
    np.matmul(mat, sp, out=np.moveaxis(out, 0, 3))
    return out


def _k_views(grid):
    return _meshes(grid).k


def _inv_k2(grid):
    return _meshes(grid).inv_k2


# ---------------------------------------------------------------------------
# divergence / gradient / curl

def divergence_values(vec_values, grid):
    """div of a (3, x1, x2, x3, t) sample block, spectrally."""
    spec = _space_fft(vec_values)
    d = _apply_mode_matrix(spec, _meshes(grid).op_matrix("div"))
    return _space_ifft_real(d, grid)[0]


def divergence(field):
    if field.rank == "vector3":
        return PeriodicField(field.grid, "scalar",
                             divergence_values(field.values, field.grid),
                             _validate=False)
    if field.rank == "sym_tensor3":
        return PeriodicField(field.grid, "vector3",
                             sym_divergence_values(field.values, field.grid),
                             _validate=False)
    raise ConfigError("divergence expects a vector3 or sym_tensor3 field")


def sym_divergence_values(t6_values, grid):
    """Row-wise divergence of a symmetric tensor block, (3, ...) out."""
    spec = _space_fft(t6_values)
    rows = _apply_mode_matrix(spec, _meshes(grid).op_matrix("symdiv"))
    return _space_ifft_real(rows, grid)


def gradient_values(scalar_values, grid):
    spec = _space_fft(scalar_values)
    rows = _apply_mode_matrix(spec, _meshes(grid).op_matrix("grad"))
    return _space_ifft_real(rows, grid)


def gradient(field):
    if field.rank != "scalar":
        raise ConfigError("gradient expects a scalar field")
    return PeriodicField(field.grid, "vector3",
                         gradient_values(field.values, field.grid),
                         _validate=False)


def curl_values(vec_values, grid):
    spec = _space_fft(vec_values)
    rows = _apply_mode_matrix(spec, _meshes(grid).op_matrix("curl"))
    return _space_ifft_real(rows, grid)


def curl(field):
    if field.rank != "vector3":
        raise ConfigError("curl expects a vector3 field")
    return PeriodicField(field.grid, "vector3",
                         curl_values(field.values, field.grid), _validate=False)


# ---------------------------------------------------------------------------
# Leray projection and its complement

def _null_mask(grid):
    """True where the operator wavenumber vanishes: the mean mode plus any
    bin whose spatial frequencies are all zero or Nyquist."""
    return _meshes(grid)[4]


def leray_project_values(vec_values, grid):
    """Project onto divergence-free fields with zero spatial mean.

    Bins with vanishing operator wavenumber (the mean and pure-Nyquist
    combinations) are annihilated; the complement keeps them, so the two
    operators still sum to the identity.
    """
    spec = _space_fft(vec_values)
    out = _apply_mode_matrix(spec, _meshes(grid).op_matrix("leray"))
    return _space_ifft_real(out, grid)


def leray_project(field):
    if field.rank != "vector3":
        raise ConfigError("Leray projection expects a vector3 field")
    return PeriodicField(field.grid, "vector3",
                         leray_project_values(field.values, field.grid),
                         _validate=False)


def q_complement_values(vec_values, grid):
    """Complement Id - P: the gradient part plus every annihilated bin."""
    spec = _space_fft(vec_values)
    out = _apply_mode_matrix(spec, _meshes(grid).op_matrix("qcomp"))
    return _space_ifft_real(out, grid)


def q_complement(field):
    if field.rank != "vector3":
        raise ConfigError("complement projection expects a vector3 field")
    return PeriodicField(field.grid, "vector3",
                         q_complement_values(field.values, field.grid),
                         _validate=False)


# ---------------------------------------------------------------------------
# inverse divergence

def inverse_divergence_values(vec_values, grid, check_mean=True, mean_tol=1e-10):
    """Symmetric trace-free S with div S = F, for spatially mean-free F.

    Per spatial mode k != 0 the solution used is
        S(k) = a (k x) F + F (x) k) + b (F.k) k (x) k + c (F.k) Id,
        a = -i/|k|^2,  b = i/(2|k|^4),  c = i/(2|k|^2),
    the unique member of that ansatz family that is trace-free.
    """
    scale = float(np.max(np.abs(vec_values))) or 1.0
    mean = vec_values.mean(axis=(1, 2, 3))
    if check_mean and np.max(np.abs(mean)) > mean_tol * scale:
        raise NumericalAbort(
            "inverse divergence needs a spatially mean-free field; "
            f"relative mean magnitude {np.max(np.abs(mean)) / scale:.3e}"
        )
    spec = _space_fft(vec_values)
    rows = _apply_mode_matrix(spec, _meshes(grid).op_matrix("invdiv"))
    return _space_ifft_real(rows, grid)


def inverse_divergence(field, check_mean=True):
    if field.rank != "vector3":
        raise ConfigError("inverse divergence expects a vector3 field")
    vals = inverse_divergence_values(field.values, field.grid, check_mean=check_mean)
    return PeriodicField(field.grid, "sym_tensor3", vals, _validate=False)


# ---------------------------------------------------------------------------
# oscillatory integrals and slow-part extraction

def oscillatory_integral(field, k_int, lam):
    """Quadrature of f(x, t) e^{i lam k.x} over T^3, one complex value per t."""
    if field.rank != "scalar":
        raise ConfigError("oscillatory_integral expects a scalar field")
    grid = field.grid
    k = np.asarray(k_int, dtype=np.int64)
    if k.shape != (3,):
        raise ConfigError("k must be an integer 3-vector")
    x1 = grid.coords(0)[:, None, None]
    x2 = grid.coords(1)[None, :, None]
    x3 = grid.coords(2)[None, None, :]
    phase = np.exp(1j * lam * (k[0] * x1 + k[1] * x2 + k[2] * x3))
    vals = field.values * phase[..., None]
    return vals.mean(axis=(0, 1, 2)) * (2.0 * np.pi) ** 3


def slow_average_values(values, grid, cutoff):
    """Low-pass keeping spatial modes with |k_i| <= cutoff on every axis."""
    spec = _space_fft(values)
    for axis in range(3):
        if axis == 2:
            k = np.arange(grid.n_space // 2 + 1)
        else:
            k = np.abs(grid.wavenumbers(axis))
        shape = [1, 1, 1, 1]
        shape[axis] = k.size
        spec *= (k <= cutoff).astype(float).reshape(shape)
    return _space_ifft_real(spec, grid)


@dataclass
class StationaryPhaseCheck:
    lams: list
    measured: list
    bounds: list
    decay_order: float
    bound_satisfied: bool


def stationary_phase_check(field, k_int, lams, order=2):
    """Measure the oscillation average |mean of a e^{i lam k.x}| against
    [a]_order / lam^order.

    The volume-normalized average is the quantity obeying the bound with
    constant one (repeated integration by parts); the raw torus integral is
    just (2 pi)^3 times it.
    """
    from .fields import holder_seminorm

    vol = (2.0 * np.pi) ** 3
    bound_const = holder_seminorm(field, order, domain="space").value
    measured = []
    bounds = []
    for lam in lams:
        val = np.max(np.abs(oscillatory_integral(field, k_int, lam))) / vol
        measured.append(float(val))
        bounds.append(float(bound_const / lam ** order))
    ok = all(m <= b * (1 + 1e-9) for m, b in zip(measured, bounds))
    logs = np.log(np.maximum(measured, 1e-300))
    slopes = np.diff(logs) / np.diff(np.log(lams))
    decay = float(-slopes[-1])
    return StationaryPhaseCheck([int(l) for l in lams], measured, bounds, decay, ok)


# ---------------------------------------------------------------------------
# identity battery

@dataclass
class OperatorReport:
    """Worst-case deviations of the projection/inverse-divergence identities
    over a batch of random band-limited fields."""

    n_fields: int
    n_space: int
    n_time: int
    seed: int
    n_extra_fields: int = 0
    max_projection_idempotence: float = 0.0
    max_complement_identity: float = 0.0
    max_projected_divergence: float = 0.0
    max_inverse_divergence_residual: float = 0.0
    max_inverse_divergence_trace: float = 0.0
    max_gradient_annihilation: float = 0.0
    elapsed_seconds: float = 0.0
    per_identity_tolerance: dict = dc_field(default_factory=dict)

    def worst_table(self):
        return {
            "projection_idempotence": self.max_projection_idempotence,
            "complement_identity": self.max_complement_identity,
            "projected_divergence": self.max_projected_divergence,
            "inverse_divergence_residual": self.max_inverse_divergence_residual,
            "inverse_divergence_trace": self.max_inverse_divergence_trace,
            "gradient_annihilation": self.max_gradient_annihilation,
        }

    def passes(self, tolerances):
        table = self.worst_table()
        return all(table[k] <= tolerances[k] for k in tolerances)


def operator_identity_report(grid=None, n_fields=200, seed=0, band=None,
                             n_extra=None):
    """Run the projection / inverse-divergence identity battery.

    Every application is a full physical -> spectral -> physical round trip,
    so repeated application really exercises the numerical path rather than
    reusing one set of coefficients.

    The four headline identities (idempotence, projected divergence, inverse
    divergence residual and trace) run on every field.  The two supporting
    ones (P + Q = Id, annihilation of gradients) only need a representative
    sample, so for large batches they run on the first ``n_extra`` fields.
    """
    if grid is None:
        grid = Grid4(32, 16)
    if band is None:
        band = grid.n_space // 3
    if n_extra is None:
        n_extra = n_fields if n_fields <= 25 else max(25, n_fields // 8)
    n_extra = min(n_extra, n_fields)
    report = OperatorReport(n_fields=n_fields, n_space=grid.n_space,
                            n_time=grid.n_time, seed=seed, n_extra_fields=n_extra)
    t0 = time.perf_counter()
    def sup(arr):
        return float(np.max(np.abs(arr)))

    for i in range(n_fields):
        u = random_band_limited(grid, "vector3", band, seed=seed + i,
                                zero_mean=False)
        scale = max(sup(u.values), 1e-300)
        pu = leray_project_values(u.values, grid)
        ppu = leray_project_values(pu, grid)
        np.subtract(ppu, pu, out=ppu)
        report.max_projection_idempotence = max(
            report.max_projection_idempotence, sup(ppu) / scale)
        report.max_projected_divergence = max(
            report.max_projected_divergence,
            sup(divergence_values(pu, grid)) / scale)
        # mean-free source for the inverse divergence
        f = u.values - u.values.mean(axis=(1, 2, 3), keepdims=True)
        fscale = max(sup(f), 1e-300)
        s = inverse_divergence_values(f, grid, check_mean=False)
        back = sym_divergence_values(s, grid)
        np.subtract(back, f, out=back)
        report.max_inverse_divergence_residual = max(
            report.max_inverse_divergence_residual, sup(back) / fscale)
        report.max_inverse_divergence_trace = max(
            report.max_inverse_divergence_trace,
            sup(s[0] + s[1] + s[2]) / fscale)
        if i >= n_extra:
            continue
        qu = q_complement_values(u.values, grid)
        qu += pu
        np.subtract(qu, u.values, out=qu)
        report.max_complement_identity = max(
            report.max_complement_identity, sup(qu) / scale)
        # gradients are annihilated by the projection
        phi = random_band_limited(grid, "scalar", band, seed=seed + 10 ** 6 + i)
        g = gradient_values(phi.values, grid)
        gscale = max(sup(g), 1e-300)
        report.max_gradient_annihilation = max(
            report.max_gradient_annihilation,
            sup(leray_project_values(g, grid)) / gscale)
    report.elapsed_seconds = time.perf_counter() - t0
    return report
