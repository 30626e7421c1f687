import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrfm_cat import drive, observables as obs
from mrfm_cat.quantum_engine import CoherentInit, SpinorFockState, coherent_state, evolve


def product_state(osc, up, down, tau=0.0):
    return SpinorFockState(up * osc, down * osc, tau)


def test_ground_state_peak():
    h = obs.hermite_functions(np.array([0.0]), 1)
    assert h[0, 0] == pytest.approx(math.pi ** -0.25)
    assert math.pi ** -0.25 == pytest.approx(0.7511, abs=1e-4)


def test_orthonormality_low_orders():
    g = obs.SpatialGrid(-20, 20, 4001)
    h = obs.hermite_functions(g.z, 51)
    gram = h @ h.T * g.dz
    assert np.max(np.abs(gram - np.eye(51))) < 1e-8


def test_high_order_functions_finite_and_normalised():
    g = obs.SpatialGrid(-75, 75, 15001)
    h = obs.hermite_functions(g.z, 2000)
    assert np.all(np.isfinite(h))
    for k in (0, 500, 1999):
        assert np.sum(h[k] ** 2) * g.dz == pytest.approx(1.0, abs=1e-8)


def test_coherent_state_wavefunction():
    init = CoherentInit.from_means(-20.0, 0.0)
    s = coherent_state(init, 2000)
    g = obs.SpatialGrid()
    up, down = obs.wavefunctions(s, g)
    exact = math.pi ** -0.25 * np.exp(-0.5 * (g.z + 20.0) ** 2)
    assert np.max(np.abs(up - exact)) < 1e-6
    assert np.all(down == 0)


def test_moving_coherent_state_wavefunction():
    z0, p0 = 3.0, -2.0
    s = coherent_state(CoherentInit.from_means(z0, p0), 200)
    g = obs.SpatialGrid(-20, 20, 1601)
    up, _ = obs.wavefunctions(s, g)
    exact = math.pi ** -0.25 * np.exp(-0.5 * (g.z - z0) ** 2 + 1j * p0 * g.z - 0.5j * z0 * p0)
    assert np.max(np.abs(up - exact)) < 1e-10


def test_vacuum_density():
    s = coherent_state(CoherentInit(0.0), 5)
    d = obs.density(s, obs.SpatialGrid(-10, 10, 801))
    assert np.allclose(d.p_total, math.pi ** -0.5 * np.exp(-d.z ** 2), atol=1e-15)
    assert np.all(d.p_down == 0)


@settings(max_examples=15, deadline=None)
@given(re=st.floats(-10, 10), im=st.floats(-10, 10), theta=st.floats(0, math.pi))
def test_density_integrates_to_one_and_parseval(re, im, theta):
    s = coherent_state(CoherentInit(complex(re, im), theta), 300)
    d = obs.density(s)
    assert d.integral() == pytest.approx(1.0, abs=1e-6)
    p11, p22 = obs.populations(s)
    assert d.integral("p_up") == pytest.approx(p11, abs=1e-6)
    assert d.integral("p_down") == pytest.approx(p22, abs=1e-6)


def test_coverage_warning():
    s = coherent_state(CoherentInit.from_means(-20.0, 0.0), 400)
    with pytest.warns(obs.CoverageWarning):
        obs.density(s, obs.SpatialGrid(-22, 22, 441))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        obs.density(s)


def test_grid_validation_and_helpers():
    with pytest.raises(ValueError):
        obs.SpatialGrid(1.0, -1.0)
    with pytest.raises(ValueError):
        obs.SpatialGrid(points=1)
    g = obs.SpatialGrid()
    assert g.dz == pytest.approx(0.05)
    assert g.refined().dz == pytest.approx(0.025)
    c = obs.SpatialGrid.covering(-20 / math.sqrt(2))
    assert c.z_min <= -26 and c.z_max >= 26


def test_populations_examples():
    s = coherent_state(CoherentInit.from_means(-20.0, 0.0), 400)
    assert obs.populations(s) == pytest.approx((1.0, 0.0), abs=1e-14)
    rabi = 3.0
    traj = evolve(coherent_state(CoherentInit(0.0), 4), drive.constant(0.0), rabi, 0.0, math.pi / rabi,
                  stride=math.pi / rabi)
    assert obs.populations(traj.final) == pytest.approx((0.0, 1.0), abs=1e-10)


def test_means_examples():
    s = coherent_state(CoherentInit.from_means(-20.0, 0.0), 400)
    assert obs.means(s) == pytest.approx((-20.0, 0.0, 0.0, 0.0, 0.5), abs=1e-8)
    assert obs.means(coherent_state(CoherentInit(0.0), 3)) == pytest.approx((0, 0, 0, 0, 0.5), abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(re=st.floats(-5, 5), im=st.floats(-5, 5), theta=st.floats(0, math.pi), phi=st.floats(0, 2 * math.pi))
def test_product_states_uncorrelated(re, im, theta, phi):
    s = coherent_state(CoherentInit(complex(re, im), theta, phi), 150)
    r1, r2 = obs.correlations(s)
    assert abs(r1) < 1e-12 and abs(r2) < 1e-12


def test_entangled_state_has_correlations():
    left = coherent_state(CoherentInit.from_means(-5.0, 0.0), 120).a
    right = coherent_state(CoherentInit.from_means(5.0, 0.0), 120).a
    s = SpinorFockState(left / math.sqrt(2), right / math.sqrt(2), 0.0)
    # <z S_x> vanishes (no overlap) but <z S_z> would not; use an x-polarised mix instead
    mix = SpinorFockState((left + right) / 2, (left - right) / 2, 0.0)
    k = math.sqrt(mix.norm())
    mix = SpinorFockState(mix.a / k, mix.b / k, 0.0)
    assert abs(obs.correlations(mix)[1]) > 1.0
    assert obs.position_variance(s) == pytest.approx(25.5, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_bloch_ball(seed):
    rng = np.random.default_rng(seed)
    n = 20
    a = rng.normal(size=n) + 1j * rng.normal(size=n)
    b = rng.normal(size=n) + 1j * rng.normal(size=n)
    k = math.sqrt(np.vdot(a, a).real + np.vdot(b, b).real)
    assert obs.bloch_length_sq(SpinorFockState(a / k, b / k, 0.0)) <= 0.25 + 1e-12


def test_coherent_variance_and_occupation():
    s = coherent_state(CoherentInit.from_means(4.0, 2.0), 200)
    assert obs.position_variance(s) == pytest.approx(0.5, abs=1e-10)
    assert obs.mean_occupation(s) == pytest.approx(10.0, abs=1e-10)


def test_significant_size_trims_empty_tail():
    s = coherent_state(CoherentInit(0.0), 50)
    assert obs.significant_size(s) == 1
