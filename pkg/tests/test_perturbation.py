import numpy as np
import pytest

from dissipator.errors import ConfigError, NumericalAbort, ResolutionError
from dissipator.beltrami import PhasePartition, build_basis
from dissipator.fields import (Grid4, TWO_PI, random_band_limited,
                               resample_values, space_integral)
from dissipator.operators import (
    curl_values,
    divergence_values,
    gradient_values,
    sym_divergence_values,
)
from dissipator.perturbation import (
    EnergyProfile,
    assemble_new_stress,
    build_new_pressure,
    build_perturbation,
    build_waves,
    compute_rho,
    oscillation_mean_check,
)

BASIS = build_basis(5)
PART = PhasePartition()


def zero_state_bundle(grid, lam, energy, delta_bar=0.5, mu=1, **kw):
    rho = compute_rho(energy.samples(grid), None, grid, delta_bar)
    return build_perturbation(grid, BASIS, PART, lam, mu, rho, **kw), rho


# ----------------------------------------------------------------- energy

def test_energy_profile_kinds():
    const = EnergyProfile(3.5)
    assert np.allclose(const.at([0.0, 1.0]), 3.5)
    fn = EnergyProfile(lambda t: 2.0 + np.sin(t))
    assert fn.at(np.pi / 2) == pytest.approx(3.0)
    lo, hi = fn.bounds()
    assert lo == pytest.approx(1.0, abs=1e-3)
    assert hi == pytest.approx(3.0, abs=1e-3)


def test_energy_profile_samples_interpolate():
    t16 = TWO_PI * np.arange(16) / 16
    samples = 2.0 + np.sin(t16) + 0.25 * np.cos(3 * t16)
    prof = EnergyProfile(samples)
    t_fine = TWO_PI * np.arange(64) / 64
    want = 2.0 + np.sin(t_fine) + 0.25 * np.cos(3 * t_fine)
    assert np.max(np.abs(prof.at(t_fine) - want)) < 1e-10


def test_energy_profile_odd_sample_count():
    # odd lengths have no Nyquist bin; the interpolant must pass through
    # every sample instead of collapsing to the mean
    samples = [40.0, 42.0, 41.0]
    prof = EnergyProfile(samples)
    t3 = TWO_PI * np.arange(3) / 3
    assert np.max(np.abs(prof.at(t3) - samples)) < 1e-12


def test_energy_profile_rejects_nonpositive():
    with pytest.raises(ConfigError):
        EnergyProfile(0.0)
    with pytest.raises(ConfigError):
        EnergyProfile(lambda t: np.cos(t))      # dips below zero


# ----------------------------------------------------------------- rho

def test_compute_rho_constant_profile():
    g = Grid4(16, 8)
    e = np.full(8, 744.0)
    rho = compute_rho(e, None, g, 0.5)
    want = 744.0 * 0.5 / (3 * TWO_PI ** 3)
    assert np.max(np.abs(rho - want)) < 1e-12


def test_compute_rho_aborts_without_headroom():
    g = Grid4(16, 8)
    e = np.full(8, 1.0)
    v = np.ones((3,) + g.shape)         # kinetic energy 3 (2 pi)^3 >> 1
    with pytest.raises(NumericalAbort):
        compute_rho(e, v, g, 0.5)


# ----------------------------------------------------------------- waves

def test_zero_state_wave_is_beltrami_eigenfield():
    g = Grid4(32, 8)
    energy = EnergyProfile(744.0)
    bundle, rho = zero_state_bundle(g, lam=2, energy=energy)
    w = bundle.w_o
    scale = np.max(np.abs(w))
    assert scale > 0
    # divergence-free without any corrector
    assert np.max(np.abs(divergence_values(w, g))) < 1e-10 * scale
    # curl eigenrelation with eigenvalue lam * lam0 = 10
    cw = curl_values(w, g)
    assert np.max(np.abs(cw - 10.0 * w)) < 1e-9 * scale
    # corrector identically zero, both routes agree
    assert np.max(np.abs(bundle.w_c)) < 1e-12 * scale
    assert bundle.corrector.agrees
    # only the zero-parity class is active
    active = [r for r in bundle.records if r.sup_amplitude > 0]
    assert len(active) == 6
    assert all(r.class_bits == (0, 0, 0) for r in active)


def test_zero_state_wave_carries_designed_energy():
    g = Grid4(32, 8)
    energy = EnergyProfile(lambda t: 744.0 * (1 + 0.3 * np.sin(t)))
    bundle, rho = zero_state_bundle(g, lam=2, energy=energy)
    kinetic = space_integral(
        np.einsum("c...,c...->...", bundle.w_o, bundle.w_o), g)
    want = 3.0 * rho * TWO_PI ** 3
    assert np.max(np.abs(kinetic - want)) < 1e-9 * np.max(want)
    assert oscillation_mean_check(bundle.w_o, g, rho) < 1e-12 * np.max(rho) * 100


def test_wave_mean_matches_offdiagonal_target():
    g = Grid4(32, 8)
    t = g.times()
    rho = np.full(8, 1.0)
    # constant-in-space, time-varying stress well inside the ball
    r_ell6 = np.zeros((6,) + g.shape)
    r_ell6[0] = 0.02 * np.sin(t)
    r_ell6[1] = -0.02 * np.sin(t)
    r_ell6[3] = 0.015 * np.cos(t)
    w_o, _, _ = build_waves(g, BASIS, PART, 2, 1, rho, None, r_ell6)
    dev = oscillation_mean_check(w_o, g, rho, r_ell6)
    assert dev < 1e-10


def test_wave_requires_resolution():
    g = Grid4(16, 4)
    with pytest.raises(ResolutionError):
        build_waves(g, BASIS, PART, 4, 1, np.ones(4))   # band 16 > 7


def test_wave_rejects_bad_mu():
    g = Grid4(32, 4)
    with pytest.raises(ConfigError):
        build_waves(g, BASIS, PART, 2, 3, np.ones(4))   # 3 does not divide 2


def test_wave_aborts_outside_ball():
    g = Grid4(32, 4)
    rho = np.full(4, 1.0)
    r_ell6 = np.zeros((6,) + g.shape)
    r_ell6[0] = 5.0       # way outside the decomposition ball
    r_ell6[1] = -5.0
    with pytest.raises(NumericalAbort):
        build_waves(g, BASIS, PART, 2, 1, rho, None, r_ell6)


def test_two_classes_active_on_cell_face():
    g = Grid4(32, 4)
    rho = np.full(4, 1.0)
    v = np.zeros((3,) + g.shape)
    v[0] = 0.5
    v[1] = 0.1
    v[2] = 0.1             # mu v sits between corners (0,0,0) and (1,0,0)
    w_o, _, records = build_waves(g, BASIS, PART, 2, 1, rho, v)
    active_classes = {r.class_bits for r in records if r.sup_amplitude > 1e-12}
    assert active_classes == {(0, 0, 0), (1, 0, 0)}
    # the two classes sit on different families: mean part still exact
    assert oscillation_mean_check(w_o, g, rho) < 1e-10


def test_corrector_routes_agree_with_smooth_amplitudes():
    # spatially varying coefficients driven by a gentle band-1 stress: the
    # amplitude spectrum is effectively band-limited, so the direct projection
    # route and the vector-potential route must coincide to round-off
    g = Grid4(32, 8)
    rho = np.full(8, 2.0)
    r6 = 0.08 * random_band_limited(g, "sym_tensor3", 1, seed=3).values
    mean = (r6[0] + r6[1] + r6[2]) / 3.0
    for c in range(3):
        r6[c] -= mean
    bundle = build_perturbation(g, BASIS, PART, 2, 1, rho, r_ell6=r6,
                                corrector_tol=1e-8)
    assert np.max(np.abs(bundle.w_c)) > 1e-3
    assert bundle.corrector.disagreement < 1e-10
    assert bundle.corrector.agrees
    # the combined correction is divergence-free
    w = bundle.w
    assert np.max(np.abs(divergence_values(w, g))) < 1e-9 * np.max(np.abs(w))


def test_corrector_disagreement_flags_underresolved_amplitudes():
    # a strong velocity parks mu*v inside the steep partition transition
    # shell; the weight functions are smooth but far from band-limited, so at
    # coarse resolution the two corrector routes disagree by the aliased tail.
    # the disagreement must be reported, and must shrink under refinement.
    gc = Grid4(48, 8)
    rho = np.full(8, 1.0)
    vc = 0.46 * random_band_limited(gc, "vector3", 1, seed=8).values
    coarse = build_perturbation(gc, BASIS, PART, 4, 2, rho, v_ell_values=vc,
                                corrector_tol=1e-8)
    assert not coarse.corrector.agrees
    assert 1e-3 < coarse.corrector.disagreement < 1.0
    # both routes still see the same corrector magnitude
    rel = abs(coarse.corrector.route_direct_sup
              - coarse.corrector.route_potential_sup)
    assert rel < 0.05 * coarse.corrector.route_direct_sup
    # the published corrector (projection route) keeps w divergence-free
    w = coarse.w
    assert np.max(np.abs(divergence_values(w, gc))) < 1e-9 * np.max(np.abs(w))

    gf = Grid4(64, 8)
    vf = resample_values(vc, gc, gf)
    fine = build_perturbation(gf, BASIS, PART, 4, 2, rho, v_ell_values=vf,
                              corrector_tol=1e-8)
    assert fine.corrector.disagreement < 0.7 * coarse.corrector.disagreement


# ----------------------------------------------------------------- pressure

def test_new_pressure_zero_state():
    g = Grid4(32, 8)
    energy = EnergyProfile(744.0)
    bundle, rho = zero_state_bundle(g, lam=2, energy=energy)
    p1 = build_new_pressure(None, bundle.w_o, bundle.w, None, None, g)
    want = -0.5 * np.einsum("c...,c...->...", bundle.w_o, bundle.w_o)
    assert np.max(np.abs(p1 - want)) < 1e-12


# ----------------------------------------------------------------- stress

def test_new_stress_vanishes_for_constant_energy_zero_state():
    g = Grid4(48, 8)
    energy = EnergyProfile(744.0)
    bundle, rho = zero_state_bundle(g, lam=2, energy=energy)
    r1 = assemble_new_stress(g, bundle.w, bundle.w_o, None, None, None, None)
    scale = np.max(np.abs(bundle.w_o)) ** 2
    assert np.max(np.abs(r1)) < 1e-11 * scale
    assert np.all(r1[0] + r1[1] + r1[2] == 0.0)


def test_new_stress_time_variation_only():
    g = Grid4(48, 8)
    energy = EnergyProfile(lambda t: 744.0 * (1 + 0.4 * np.sin(t)))
    bundle, rho = zero_state_bundle(g, lam=2, energy=energy)
    r1 = assemble_new_stress(g, bundle.w, bundle.w_o, None, None, None, None)
    # equals the inverse divergence of d_t w alone: the oscillation line is
    # exact for a pure eigenwave with spatially constant amplitudes
    from dissipator.operators import inverse_divergence_values
    from dissipator.perturbation import _time_derivative

    want = inverse_divergence_values(_time_derivative(bundle.w, g), g)
    scale = np.max(np.abs(want))
    assert scale > 0
    assert np.max(np.abs(r1 - want)) < 1e-10 * scale
    assert np.all(r1[0] + r1[1] + r1[2] == 0.0)


def test_stress_mollification_difference_line():
    g = Grid4(16, 4)
    rng = np.random.default_rng(0)
    r_ring = rng.standard_normal((6,) + g.shape)
    zeros = np.zeros((3,) + g.shape)
    # with w = 0 and no smoothed stress, only the difference line survives
    r1 = assemble_new_stress(g, zeros, zeros, None, None, r_ring, None)
    mean = (r_ring[0] + r_ring[1] + r_ring[2]) / 3.0
    want = r_ring.copy()
    want[0] -= mean
    want[1] -= mean
    want[2] -= mean
    assert np.max(np.abs(r1 - want)) < 1e-12
    assert np.all(r1[0] + r1[1] + r1[2] == 0.0)


def test_stress_velocity_difference_line():
    g = Grid4(16, 4)
    # spatially constant w: the transport and oscillation lines both vanish
    w = np.zeros((3,) + g.shape)
    w[0] = 1.0
    w[1] = 2.0
    w[2] = -0.5
    v = random_band_limited(g, "vector3", 2, seed=2).values
    r1 = assemble_new_stress(g, w, w, v, None, None, None)
    inner = np.einsum("c...,c...->...", v, w)
    want = np.stack([
        2 * v[0] * w[0] - (2.0 / 3.0) * inner,
        2 * v[1] * w[1] - (2.0 / 3.0) * inner,
        2 * v[2] * w[2] - (2.0 / 3.0) * inner,
        v[0] * w[1] + v[1] * w[0],
        v[0] * w[2] + v[2] * w[0],
        v[1] * w[2] + v[2] * w[1],
    ])
    mean = (want[0] + want[1] + want[2]) / 3.0
    want[0] -= mean
    want[1] -= mean
    want[2] -= mean
    assert np.max(np.abs(r1 - want)) < 1e-10
    assert np.all(r1[0] + r1[1] + r1[2] == 0.0)
