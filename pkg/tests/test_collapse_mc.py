import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binomtest

from mrfm_cat import cat_analysis as ca, collapse_mc as cm, drive, observables as obs
from mrfm_cat.quantum_engine import CoherentInit, SpinorFockState, coherent_state, evolve

from test_cat_analysis import two_packet_state

GRID = obs.SpatialGrid()


def report_with_areas(areas):
    n = len(areas)
    return ca.CatReport(0.0, tuple(range(n)), tuple(float(k) for k in range(n)), tuple(areas), tuple(areas),
                        tuple(range(n + 1)), tuple((0.0, 0.0) for _ in areas))


@pytest.fixture(scope="module")
def cat():
    s = two_packet_state(w_left=0.97, up_left=0.9, up_right=0.1)
    return s, ca.detect_peaks(obs.density(s, GRID))


def test_sample_peak_rare_minor():
    rng = cm.stream(1, 0, cm.CHOICE_STREAM)
    draws = 100_000
    minor = sum(cm.sample_peak(report_with_areas((0.99, 0.01)), rng) for _ in range(draws))
    assert abs(minor / draws - 0.01) <= 0.003


def test_sample_peak_symmetric():
    rng = cm.stream(2, 0, cm.CHOICE_STREAM)
    draws = 100_000
    right = sum(cm.sample_peak(report_with_areas((0.5, 0.5)), rng) for _ in range(draws))
    assert abs(right / draws - 0.5) <= 0.005


def test_sample_peak_three_way():
    rng = cm.stream(3, 0, cm.CHOICE_STREAM)
    counts = np.bincount([cm.sample_peak(report_with_areas((0.2, 0.5, 0.3)), rng) for _ in range(30_000)],
                         minlength=3) / 30_000
    assert counts == pytest.approx([0.2, 0.5, 0.3], abs=0.015)


def test_streams_reproducible_and_distinct():
    a = cm.stream(9, 4, 1).random(5)
    assert np.array_equal(a, cm.stream(9, 4, 1).random(5))
    assert not np.array_equal(a, cm.stream(9, 5, 1).random(5))
    assert not np.array_equal(a, cm.stream(9, 4, 0).random(5))


def test_schedule_validation():
    with pytest.raises(ValueError):
        cm.CollapseSchedule(decoherence_time=0.0)
    with pytest.raises(ValueError):
        cm.CollapseSchedule(lifetimes=(1.0, -2.0))
    assert cm.CollapseSchedule(lifetimes=[1, 2]).lifetimes == (1.0, 2.0)


@pytest.mark.parametrize("smooth", [True, False])
def test_collapse_major_keeps_ordering(cat, smooth):
    s, rep = cat
    major, minor = rep.dominant()
    post = cm.collapse(s, rep, major, smooth=smooth)
    p11, p22 = obs.populations(post)
    assert post.norm() == pytest.approx(1.0, abs=1e-10)
    assert p11 + p22 == pytest.approx(1.0, abs=1e-10)
    assert p11 > p22 and p22 > 0.05
    after = ca.detect_peaks(obs.density(post, GRID))
    assert after.n_peaks == 1
    assert after.peak_positions[0] == pytest.approx(rep.peak_positions[major], abs=2 * GRID.dz)


@pytest.mark.parametrize("smooth", [True, False])
def test_collapse_minor_flips_ordering(cat, smooth):
    s, rep = cat
    _, minor = rep.dominant()
    post = cm.collapse(s, rep, minor, smooth=smooth)
    p11, p22 = obs.populations(post)
    assert p22 > p11 > 0.05
    assert post.norm() == pytest.approx(1.0, abs=1e-10)


def test_collapse_preconditions(cat):
    s, rep = cat
    single = ca.detect_peaks(obs.density(coherent_state(CoherentInit(0.0), 10), GRID))
    with pytest.raises(ValueError):
        cm.collapse(s, single, 0)
    with pytest.raises(IndexError):
        cm.collapse(s, rep, 5)


def test_identity_window_reexpansion_exact(cat):
    s, _ = cat
    g = cm._quadrature_grid(obs.significant_size(s), GRID.dz)
    back = cm.project(s, np.ones(g.points), g)
    assert np.max(np.abs(back.a - s.a)) < 1e-12
    assert np.max(np.abs(back.b - s.b)) < 1e-12


@given(lo=st.floats(-5, 0), width=st.floats(0.5, 5), taper=st.floats(0.01, 0.4))
def test_window_shape(lo, width, taper):
    z = np.linspace(-10, 10, 2001)
    w = cm.window(z, lo, lo + width, taper)
    assert np.all((w >= 0) & (w <= 1))
    assert np.all(w[(z > lo + taper) & (z < lo + width - taper)] == 1)
    assert np.all(w[(z < lo - taper) | (z > lo + width + taper)] == 0)


def test_empty_schedule_matches_plain_evolve():
    s = coherent_state(CoherentInit.from_means(-6.0, 0.0), 150)
    run, states = cm.run_with_jumps(s, drive.preset("fig3"), 40.0, 0.03, cm.CollapseSchedule(lifetimes=()),
                                    2.0, keep_states=True)
    plain = evolve(s, drive.preset("fig3"), 40.0, 0.03, 2.0)
    assert run.jumps == []
    assert len(states) == len(plain)
    for x, y in zip(states, plain):
        assert x.tau == y.tau
        assert np.array_equal(x.a, y.a) and np.array_equal(x.b, y.b)


def _free(schedule, member=0, tau_end=0.3):
    s = two_packet_state(w_left=0.8)
    return cm.run_with_jumps(s, drive.constant(0.0), 0.0, 0.0, schedule, tau_end, stride=0.05, member=member)


def test_deferred_fire_and_records():
    run, _ = _free(cm.CollapseSchedule(lifetimes=(0.12,), rng_seed=4))
    assert len(run.jumps) == 1
    j = run.jumps[0]
    assert j.tau == pytest.approx(0.15)
    assert j.chosen_peak in ("major", "minor")
    assert j.post_norm == pytest.approx(1.0, abs=1e-10)
    assert sum(j.post_populations) == pytest.approx(1.0, abs=1e-10)
    assert j.as_dict()["tau"] == j.tau


def test_no_collapse_without_cat():
    s = coherent_state(CoherentInit.from_means(-6.0, 0.0), 150)
    run, _ = cm.run_with_jumps(s, drive.constant(0.0), 0.0, 0.0, cm.CollapseSchedule(lifetimes=(0.05,)),
                               0.5, stride=0.05)
    assert run.jumps == []


def test_seeded_runs_reproducible():
    sched = cm.CollapseSchedule(decoherence_time=0.1, rng_seed=21)
    a, _ = _free(sched, member=3)
    b, _ = _free(sched, member=3)
    assert [j.as_dict() for j in a.jumps] == [j.as_dict() for j in b.jumps]
    assert a.checksum() == b.checksum()


def test_minor_frequency_matches_areas():
    sched = cm.CollapseSchedule(lifetimes=(0.05,), rng_seed=8)
    runs = [_free(sched, member=m, tau_end=0.05)[0] for m in range(400)]
    jumps = [j for r in runs for j in r.jumps]
    assert len(jumps) == 400
    share = np.mean([min(j.peak_areas) / sum(j.peak_areas) for j in jumps])
    minor = sum(j.chosen_peak == "minor" for j in jumps)
    assert binomtest(minor, len(jumps), share).pvalue > 0.01
    summary = cm.summarize(runs)
    assert summary.minor_jumps == minor
    assert summary.flips_only_on_minor
    assert summary.expected_minor == pytest.approx(share * 400)


def test_parallel_ensemble_matches_serial():
    s = two_packet_state(w_left=0.8, n=120)
    kw = dict(init=s, drive=drive.constant(0.0), rabi=0.0, coupling=0.0,
              schedule=cm.CollapseSchedule(lifetimes=(0.05,), rng_seed=5), tau_end=0.1, stride=0.05)
    serial = cm.run_ensemble(3, **kw)
    parallel = cm.run_ensemble(3, workers=2, **kw)
    assert [r.member for r in parallel] == [0, 1, 2]
    assert [r.checksum() for r in serial] == [r.checksum() for r in parallel]
