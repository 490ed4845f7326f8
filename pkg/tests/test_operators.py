import numpy as np
import pytest

from dissipator.errors import ConfigError, NumericalAbort
from dissipator.fields import Grid4, PeriodicField, random_band_limited
from dissipator.operators import (
    curl,
    divergence,
    gradient,
    inverse_divergence,
    leray_project,
    operator_identity_report,
    oscillatory_integral,
    q_complement,
    slow_average_values,
    stationary_phase_check,
)


def coords(grid):
    x1 = grid.coords(0)[:, None, None, None]
    x2 = grid.coords(1)[None, :, None, None]
    x3 = grid.coords(2)[None, None, :, None]
    t = grid.coords(3)[None, None, None, :]
    return x1, x2, x3, t


def vector_field(grid, f1, f2, f3):
    x1, x2, x3, t = coords(grid)
    zero = np.zeros(grid.shape)
    vals = np.stack([f(x1, x2, x3, t) + zero for f in (f1, f2, f3)])
    return PeriodicField(grid, "vector3", vals)


# ------------------------------------------------------------------ projection

def test_projection_fixes_divergence_free_mean_free():
    g = Grid4(16, 4)
    u = vector_field(g,
                     lambda x1, x2, x3, t: np.sin(x2),
                     lambda x1, x2, x3, t: 0 * x1,
                     lambda x1, x2, x3, t: np.cos(x1))
    pu = leray_project(u)
    assert np.max(np.abs(pu.values - u.values)) < 1e-12


def test_projection_kills_gradients_and_constants():
    g = Grid4(16, 4)
    x1, x2, x3, t = coords(g)
    phi = PeriodicField(g, "scalar", np.sin(x1) * np.cos(2 * x3) + np.zeros(g.shape))
    pg = leray_project(gradient(phi))
    assert np.max(np.abs(pg.values)) < 1e-12
    const = vector_field(g, lambda *a: 1.0 + 0 * a[0], lambda *a: -2.0 + 0 * a[0],
                         lambda *a: 0.5 + 0 * a[0])
    assert np.max(np.abs(leray_project(const).values)) < 1e-14


def test_complement_keeps_mean_and_gradients():
    g = Grid4(16, 4)
    x1, x2, x3, t = coords(g)
    phi = PeriodicField(g, "scalar", np.cos(x2) + np.zeros(g.shape))
    grad = gradient(phi)
    qg = q_complement(grad)
    assert np.max(np.abs(qg.values - grad.values)) < 1e-12
    const = vector_field(g, lambda *a: 3.0 + 0 * a[0], lambda *a: 0 * a[0],
                         lambda *a: 0 * a[0])
    qc = q_complement(const)
    assert np.max(np.abs(qc.values - const.values)) < 1e-14


def test_projection_plus_complement_is_identity():
    g = Grid4(16, 8)
    u = random_band_limited(g, "vector3", 5, seed=21)
    resid = leray_project(u).values + q_complement(u).values - u.values
    assert np.max(np.abs(resid)) < 1e-12


# ------------------------------------------------------- inverse divergence

def test_inverse_divergence_single_mode_closed_form():
    g = Grid4(16, 4)
    f = vector_field(g, lambda *a: 0 * a[0], lambda *a: 0 * a[0],
                     lambda x1, x2, x3, t: np.cos(x1))
    s = inverse_divergence(f)
    x1, _, _, _ = coords(g)
    want_xz = np.sin(x1) + np.zeros(g.shape)
    assert np.max(np.abs(s.values[4] - want_xz)) < 1e-12     # xz component
    for comp in (0, 1, 2, 3, 5):
        assert np.max(np.abs(s.values[comp])) < 1e-12


def test_inverse_divergence_right_inverse_and_traceless():
    g = Grid4(16, 8)
    f = random_band_limited(g, "vector3", 5, seed=4, zero_mean=True)
    s = inverse_divergence(f)
    back = divergence(s)
    assert np.max(np.abs(back.values - f.values)) < 1e-10
    trace = s.values[0] + s.values[1] + s.values[2]
    assert np.max(np.abs(trace)) < 1e-12


def test_inverse_divergence_rejects_mean():
    g = Grid4(16, 4)
    f = vector_field(g, lambda *a: 1.0 + np.sin(a[0]), lambda *a: 0 * a[0],
                     lambda *a: 0 * a[0])
    with pytest.raises(NumericalAbort):
        inverse_divergence(f)


# ----------------------------------------------------------------- curl

def test_curl_eigenfield():
    g = Grid4(16, 4)
    u = vector_field(g, lambda *a: 0 * a[0],
                     lambda x1, x2, x3, t: np.sin(x1),
                     lambda x1, x2, x3, t: np.cos(x1))
    cu = curl(u)
    assert np.max(np.abs(cu.values - u.values)) < 1e-12


def test_divergence_rank_check():
    g = Grid4(8, 4)
    with pytest.raises(ConfigError):
        divergence(PeriodicField.zeros(g, "scalar"))


# ------------------------------------------------------- oscillatory integrals

def test_oscillatory_integral_picks_single_coefficient():
    g = Grid4(16, 4)
    x1, x2, x3, t = coords(g)
    f = PeriodicField(g, "scalar", np.cos(3 * x1) + np.zeros(g.shape))
    vals = oscillatory_integral(f, (1, 0, 0), 3)
    want = 0.5 * (2 * np.pi) ** 3
    assert np.max(np.abs(vals - want)) < 1e-9
    vals_off = oscillatory_integral(f, (1, 0, 0), 4)
    assert np.max(np.abs(vals_off)) < 1e-9


def test_stationary_phase_decay():
    g = Grid4(80, 4)
    x1, x2, x3, t = coords(g)
    f = PeriodicField(g, "scalar", 1.0 / (1.0 - 0.8 * np.cos(x1)) + np.zeros(g.shape))
    chk = stationary_phase_check(f, (1, 0, 0), [4, 8, 16, 32], order=2)
    assert chk.bound_satisfied
    assert chk.decay_order >= 1.8
    # analytic coefficients: geometric decay with ratio r = 1/2
    want8 = (1.0 / 0.6) * 0.5 ** 8
    assert chk.measured[1] == pytest.approx(want8, rel=1e-3)


def test_slow_average_extracts_mean_of_oscillation():
    g = Grid4(32, 4)
    x1, x2, x3, t = coords(g)
    f = (2.0 + np.cos(x2)) + np.cos(7 * x1) + 0 * t
    out = slow_average_values(f + np.zeros(g.shape), g, cutoff=2)
    want = 2.0 + np.cos(x2) + np.zeros(g.shape)
    assert np.max(np.abs(out - want)) < 1e-12


# ----------------------------------------------------------------- battery

def test_identity_battery_small():
    rep = operator_identity_report(Grid4(16, 8), n_fields=10, seed=3)
    table = rep.worst_table()
    assert table["projection_idempotence"] <= 1e-12
    assert table["complement_identity"] <= 1e-12
    assert table["projected_divergence"] <= 1e-10
    assert table["inverse_divergence_residual"] <= 1e-10
    assert table["inverse_divergence_trace"] <= 1e-12
    assert table["gradient_annihilation"] <= 1e-10
    assert rep.elapsed_seconds < 30.0
