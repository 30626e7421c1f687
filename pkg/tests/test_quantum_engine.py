import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrfm_cat import drive, observables as obs
from mrfm_cat.quantum_engine import (
    BasisTooSmallError, CoherentInit, Propagator, SpinorFockState, TruncationError,
    apply_hamiltonian, coherent_amplitudes, coherent_state, energy, evolve, required_basis_size, rhs,
)

FIG3_INIT = CoherentInit.from_means(-20.0, 0.0)


def random_state(seed, n=60):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=n) + 1j * rng.normal(size=n)
    b = rng.normal(size=n) + 1j * rng.normal(size=n)
    # damp the top of the basis so truncation does not matter
    w = np.exp(-np.arange(n) / 4.0)
    s = SpinorFockState(a * w, b * w, 0.0)
    k = math.sqrt(s.norm())
    return SpinorFockState(s.a / k, s.b / k, 0.0)


def test_vacuum():
    s = coherent_state(CoherentInit(0.0), 10)
    assert s.a[0] == 1.0
    assert np.all(s.a[1:] == 0) and np.all(s.b == 0)


def test_fig3_initial_occupation_and_means():
    s = coherent_state(FIG3_INIT, 2000)
    assert abs(FIG3_INIT.alpha) ** 2 == pytest.approx(200.0)
    assert obs.mean_occupation(s) == pytest.approx(200.0, abs=1e-6)
    z, p, sx, sy, sz = obs.means(s)
    assert z == pytest.approx(-20.0, abs=1e-8)
    assert p == pytest.approx(0.0, abs=1e-8)
    assert (sx, sy, sz) == pytest.approx((0.0, 0.0, 0.5), abs=1e-14)
    assert s.norm() == pytest.approx(1.0, abs=1e-14)
    assert s.tail_mass() < 1e-100


@given(re=st.floats(-8, 8), im=st.floats(-8, 8))
def test_coherent_mean_identities(re, im):
    init = CoherentInit(complex(re, im))
    s = coherent_state(init, 300)
    z, p, *_ = obs.means(s)
    assert z == pytest.approx(init.mean_z, abs=1e-9)
    assert p == pytest.approx(init.mean_p, abs=1e-9)
    assert init.mean_z == pytest.approx(math.sqrt(2) * re)
    assert init.mean_p == pytest.approx(math.sqrt(2) * im)


def test_coherent_amplitudes_against_direct_formula():
    alpha = 1.3 - 0.4j
    k = np.arange(15)
    direct = np.array([alpha ** n / math.sqrt(math.factorial(n)) for n in k]) * math.exp(-abs(alpha) ** 2 / 2)
    assert np.allclose(coherent_amplitudes(alpha, 15), direct, atol=1e-15)


def test_basis_too_small_reports_required_size():
    with pytest.raises(BasisTooSmallError) as info:
        coherent_state(FIG3_INIT, 150)
    assert info.value.required == required_basis_size(FIG3_INIT.alpha)
    coherent_state(FIG3_INIT, info.value.required)


def test_spin_direction():
    s = coherent_state(CoherentInit(0.0, spin_theta=math.pi / 2, spin_phi=math.pi / 2), 5)
    _, _, sx, sy, sz = obs.means(s)
    assert (sx, sy, sz) == pytest.approx((0.0, 0.5, 0.0), abs=1e-15)


def test_state_arrays_read_only():
    s = coherent_state(CoherentInit(1.0), 20)
    with pytest.raises(ValueError):
        s.a[0] = 0.0


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("verbatim", [False, True])
def test_hamiltonian_hermitian(seed, verbatim):
    u, v = random_state(seed), random_state(seed + 100)
    args = (13.7, 2.5, 0.4, verbatim)
    hu = apply_hamiltonian(u, *args)
    hv = apply_hamiltonian(v, *args)
    uhv = np.vdot(u.a, hv[0]) + np.vdot(u.b, hv[1])
    vhu = np.vdot(v.a, hu[0]) + np.vdot(v.b, hu[1])
    assert abs(uhv - np.conj(vhu)) < 1e-12


def _rate(quadratic, state, phi_dot, rabi, coupling, h=1e-3):
    """Exact time derivative of a quadratic form along the Schrodinger flow."""
    da, db = rhs(state, phi_dot, rabi, coupling)
    plus = SpinorFockState(state.a + h * da, state.b + h * db, 0.0)
    minus = SpinorFockState(state.a - h * da, state.b - h * db, 0.0)
    return (np.asarray(quadratic(plus)) - np.asarray(quadratic(minus))) / (2 * h)


@pytest.mark.parametrize("seed", range(4))
def test_ehrenfest_relations(seed):
    s = random_state(seed)
    phi_dot, rabi, coupling = 7.3, 3.1, 0.45
    dz, dp, dsx, dsy, dsz = _rate(obs.means, s, phi_dot, rabi, coupling)
    z, p, sx, sy, sz = obs.means(s)
    zsx, zsy = obs.z_spin_moments(s)
    assert dz == pytest.approx(p, abs=1e-10)
    assert dp == pytest.approx(-z + 2 * coupling * sz, abs=1e-10)
    assert dsx == pytest.approx(-phi_dot * sy + 2 * coupling * zsy, abs=1e-10)
    assert dsy == pytest.approx(phi_dot * sx + rabi * sz - 2 * coupling * zsx, abs=1e-10)
    assert dsz == pytest.approx(-rabi * sy, abs=1e-10)


def test_verbatim_sign_breaks_spin_precession():
    s = random_state(3)
    da, db = rhs(s, 7.3, 3.1, 0.45, eq12_verbatim=True)
    h = 1e-3
    sx = lambda st_: obs.means(st_)[2]
    rate = (sx(SpinorFockState(s.a + h * da, s.b + h * db, 0)) - sx(SpinorFockState(s.a - h * da, s.b - h * db, 0))) / (2 * h)
    _, _, _, sy, _ = obs.means(s)
    expected = -7.3 * sy + 2 * 0.45 * obs.z_spin_moments(s)[1]
    assert abs(rate - expected) > 1e-3


def test_energy_conserved_at_constant_drive():
    s = coherent_state(CoherentInit.from_means(2.0, 1.0, spin_theta=0.7), 120)
    prop = Propagator(drive.constant(1.5), 2.0, 0.3)
    e0 = energy(s, 1.5, 2.0, 0.3)
    worst = 0.0
    for snap in prop.iterate(s, 10.0, 0.5):
        worst = max(worst, abs(energy(snap, 1.5, 2.0, 0.3) - e0))
    assert worst < 1e-9


def test_sz_conserved_without_rabi():
    s = coherent_state(CoherentInit.from_means(2.0, 0.0), 100)
    traj = evolve(s, drive.constant(0.0), 0.0, 0.3, 5.0, stride=0.5)
    for snap in traj:
        assert np.all(snap.b == 0)
    # spin-up sees the force +2 eta S_z = +eta: displaced oscillator about z = eta
    z = np.array([obs.means(x)[0] for x in traj])
    t = traj.times
    expected = 0.3 + (2.0 - 0.3) * np.cos(t)
    assert np.allclose(z, expected, atol=1e-8)


def test_decoupled_marginals_conserved():
    s = coherent_state(CoherentInit.from_means(1.5, -0.5, spin_theta=0.4), 80)
    traj = evolve(s, drive.preset("fig3"), 5.0, 0.0, 3.0, stride=0.25)
    occ0 = np.abs(s.a) ** 2 + np.abs(s.b) ** 2
    for snap in traj:
        assert sum(obs.populations(snap)) == pytest.approx(1.0, abs=1e-10)
        assert np.allclose(np.abs(snap.a) ** 2 + np.abs(snap.b) ** 2, occ0, atol=1e-10)


def test_raw_and_interaction_pictures_agree():
    s = coherent_state(CoherentInit.from_means(-4.0, 1.0), 120)
    kw = dict(stride=0.5)
    a = Propagator(drive.preset("fig3"), 40.0, 0.03, picture="interaction").evolve(s, 3.0, **kw)
    b = Propagator(drive.preset("fig3"), 40.0, 0.03, picture="raw").evolve(s, 3.0, **kw)
    assert np.allclose(a.final.a, b.final.a, atol=1e-8)
    assert np.allclose(a.final.b, b.final.b, atol=1e-8)


def test_verbatim_switch_changes_dynamics():
    s = coherent_state(CoherentInit.from_means(-4.0, 0.0), 100)
    a = evolve(s, drive.preset("fig3"), 40.0, 0.03, 1.0).final
    b = evolve(s, drive.preset("fig3"), 40.0, 0.03, 1.0, eq12_verbatim=True).final
    assert obs.populations(a)[0] != pytest.approx(obs.populations(b)[0], abs=1e-3)


def test_truncation_error_on_tail_breach():
    s = coherent_state(CoherentInit.from_means(-4.0, 0.0), 60)
    with pytest.raises(TruncationError, match="tail mass"):
        evolve(s, drive.constant(0.0), 0.0, 0.0, 1.0, tail_tol=1e-300)


def test_health_and_snapshots():
    s = coherent_state(FIG3_INIT, 400)
    traj = evolve(s, drive.preset("fig3"), 40.0, 0.03, 2.0)
    assert len(traj) == 26
    assert traj.times[0] == 0.0 and traj.times[-1] == 2.0
    assert traj.health.max_norm_drift < 1e-10
    assert traj.health.max_tail_mass < 1e-10
    assert traj.health.steps_accepted > 0


def test_fig3_regression_pin():
    # pinned from the validated engine (N=400 is converged for tau <= 20)
    s = coherent_state(FIG3_INIT, 400)
    final = evolve(s, drive.preset("fig3"), 40.0, 0.03, 20.0, stride=1.0).final
    z, p, *_ = obs.means(final)
    assert obs.populations(final)[0] == pytest.approx(0.46230403, abs=2e-8)
    assert z == pytest.approx(-8.1602, abs=1e-3)
    assert p == pytest.approx(18.271, abs=1e-3)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), phi_dot=st.floats(-50, 50))
def test_norm_preserved_by_generator(seed, phi_dot):
    s = random_state(seed)
    da, db = rhs(s, phi_dot, 3.0, 0.2)
    # d/dtau of the norm is 2 Re <psi|psi_dot> = 0 for a Hermitian generator
    assert abs((np.vdot(s.a, da) + np.vdot(s.b, db)).real) < 1e-12
