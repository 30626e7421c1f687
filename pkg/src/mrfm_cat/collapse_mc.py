"""Phenomenological wave-function collapse onto cat-state peaks.

Schrodinger evolution is interrupted at prescribed life-times by a sudden
reduction of a multi-peak cantilever density to a single peak. The peak is
drawn with probability proportional to its integrated area and both spinor
components are cut to that peak's basin, so the surviving spin state is in
general still a superposition.

Random draws come from counter-based Philox streams keyed on
``(seed, member, stream)``, which makes every ensemble member reproducible
on its own and independent of execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import observables as obs
from .cat_analysis import DEFAULT_PROMINENCE, CatReport, detect_peaks
from .drive import DriveProfile
from .integrator import Tolerances
from .quantum_engine import Health, Propagator, SpinorFockState

LIFETIME_STREAM = 0
CHOICE_STREAM = 1


@dataclass(frozen=True)
class CollapseSchedule:
    """Life-times of successive cat states.

    ``lifetimes=None`` draws exponential life-times with mean
    ``decoherence_time``; an explicit sequence is consumed in order and no
    collapse happens once it is exhausted.
    """

    decoherence_time: float = 2 * math.pi
    lifetimes: tuple | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if not self.decoherence_time > 0:
            raise ValueError("decoherence_time must be positive")
        if self.lifetimes is not None:
            object.__setattr__(self, "lifetimes", tuple(float(x) for x in self.lifetimes))
            if any(not x > 0 for x in self.lifetimes):
                raise ValueError("life-times must be positive")


@dataclass(frozen=True)
class JumpRecord:
    tau: float
    chosen_peak: str  # "major" | "minor"
    chosen_index: int
    position: float
    pre_populations: tuple
    post_populations: tuple
    peak_areas: tuple
    post_norm: float

    @property
    def flipped(self) -> bool:
        """Did the ordering of P11 and P22 reverse across the jump?"""
        return np.sign(self.pre_populations[0] - self.pre_populations[1]) != \
            np.sign(self.post_populations[0] - self.post_populations[1])

    def as_dict(self):
        return asdict(self)


def stream(seed: int, member: int, which: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(member), int(which)])
    return np.random.Generator(np.random.Philox(ss))


def sample_peak(report: CatReport, rng: np.random.Generator) -> int:
    """Index of a peak drawn with probability proportional to its area."""
    areas = np.asarray(report.peak_areas, dtype=float)
    cdf = np.cumsum(areas)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), areas.size - 1))


def window(z: np.ndarray, lo: float, hi: float, taper: float = 0.0) -> np.ndarray:
    """Indicator of ``[lo, hi]`` with optional raised-cosine edges of width ``taper``."""
    w = ((z >= lo) & (z <= hi)).astype(float)
    if taper > 0:
        for edge, sign in ((lo, 1.0), (hi, -1.0)):
            if not math.isfinite(edge):
                continue
            x = sign * (z - edge) / taper  # -1/2 outside .. +1/2 inside
            band = np.abs(x) < 0.5
            w[band] = 0.5 * (1.0 + np.sin(math.pi * x[band]))
    return w


def _quadrature_grid(n_eff: int, dz_hint: float):
    reach = math.sqrt(2.0 * n_eff + 1.0)
    half = reach + 10.0
    # products of two basis functions carry wavenumbers up to 2 * reach
    dz = min(dz_hint, math.pi / (4.0 * reach))
    points = int(math.ceil(2 * half / dz)) + 1
    return obs.SpatialGrid(-half, half, points)


def project(state: SpinorFockState, weights: np.ndarray, grid: obs.SpatialGrid) -> SpinorFockState:
    """Multiply both spinor components by ``weights(z)`` and re-expand in the Fock basis."""
    n_eff = obs.significant_size(state)
    h = obs.hermite_basis(grid, n_eff)
    dz = grid.dz
    out = []
    for amps in (state.a, state.b):
        psi = amps[:n_eff] @ h
        coeff = np.zeros(state.size, dtype=np.complex128)
        coeff[:n_eff] = h @ (weights * psi) * dz
        out.append(coeff)
    return SpinorFockState(out[0], out[1], state.tau)


def collapse(state: SpinorFockState, report: CatReport, choice: int, *,
             analysis_grid: obs.SpatialGrid | None = None, smooth: bool = True) -> SpinorFockState:
    """Reduce ``state`` to the basin of peak ``choice`` and renormalise."""
    if report.n_peaks < 2:
        raise ValueError("collapse needs a report with at least two peaks")
    if not 0 <= choice < report.n_peaks:
        raise IndexError(f"peak index {choice} out of range")
    analysis_grid = analysis_grid or obs.SpatialGrid()
    z = analysis_grid.z
    lo_i, hi_i = report.basin_edges[choice], report.basin_edges[choice + 1]
    lo = -math.inf if choice == 0 else float(z[lo_i])
    hi = math.inf if choice == report.n_peaks - 1 else float(z[hi_i])
    n_eff = obs.significant_size(state)
    qgrid = _quadrature_grid(n_eff, 0.5 * analysis_grid.dz)
    w = window(qgrid.z, lo, hi, analysis_grid.dz if smooth else 0.0)
    cut = project(state, w, qgrid)
    norm = math.sqrt(cut.norm())
    return SpinorFockState(cut.a / norm, cut.b / norm, state.tau)


@dataclass
class JumpRun:
    """Observables along a trajectory with collapses."""

    member: int
    taus: list = field(default_factory=list)
    means: list = field(default_factory=list)  # (z, p, Sx, Sy, Sz)
    populations: list = field(default_factory=list)
    jumps: list = field(default_factory=list)
    final: SpinorFockState | None = None
    health: Health = field(default_factory=Health)

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(self.final.a.tobytes())
        h.update(self.final.b.tobytes())
        return h.hexdigest()

    def _record(self, snap):
        self.taus.append(snap.tau)
        self.means.append(obs.means(snap))
        self.populations.append(obs.populations(snap))


def run_with_jumps(init: SpinorFockState, drive: DriveProfile, rabi: float, coupling: float,
                   schedule: CollapseSchedule, tau_end: float, *, stride: float = 0.08,
                   grid: obs.SpatialGrid | None = None, prominence_floor: float = DEFAULT_PROMINENCE,
                   smooth: bool = True, member: int = 0, tolerances: Tolerances | None = None,
                   eq12_verbatim: bool = False, keep_states: bool = False):
    """Schrodinger evolution interrupted by peak-area-weighted collapses.

    The life-time clock of a segment starts at its first snapshot (time zero
    or the previous collapse). Once it has run out, the first snapshot that
    shows two or more peaks collapses; a collapse never fires on a
    single-peak density.

    Returns ``(run, states)`` where ``states`` is the list of snapshots when
    ``keep_states`` is set and ``None`` otherwise.
    """
    grid = grid or obs.SpatialGrid()
    prop = Propagator(drive, rabi, coupling, tolerances=tolerances, eq12_verbatim=eq12_verbatim)
    life_rng = stream(schedule.rng_seed, member, LIFETIME_STREAM)
    pick_rng = stream(schedule.rng_seed, member, CHOICE_STREAM)
    explicit = list(schedule.lifetimes) if schedule.lifetimes is not None else None

    def next_lifetime():
        if explicit is not None:
            return explicit.pop(0) if explicit else None
        return float(life_rng.exponential(schedule.decoherence_time))

    run = JumpRun(member)
    states = [init] if keep_states else None
    run._record(init)
    state = init
    segment_start = init.tau
    lifetime = next_lifetime()
    health = run.health
    while state.tau < tau_end:
        jumped = False
        for snap in prop.iterate(state, tau_end, stride, health):
            state = snap
            if lifetime is not None and snap.tau - segment_start >= lifetime - 1e-12:
                report = detect_peaks(obs.density(snap, grid, warn=False), prominence_floor)
                if report.n_peaks >= 2:
                    choice = sample_peak(report, pick_rng)
                    major, _ = report.dominant()
                    post = collapse(snap, report, choice, analysis_grid=grid, smooth=smooth)
                    run.jumps.append(JumpRecord(
                        tau=snap.tau,
                        chosen_peak="major" if choice == major else "minor",
                        chosen_index=choice,
                        position=report.peak_positions[choice],
                        pre_populations=obs.populations(snap),
                        post_populations=obs.populations(post),
                        peak_areas=report.peak_areas,
                        post_norm=post.norm(),
                    ))
                    state = post
                    segment_start = post.tau
                    lifetime = next_lifetime()
                    jumped = True
            run._record(state)
            if keep_states:
                states.append(state)
            if jumped:
                break
        if not jumped:
            break
    run.final = state
    return run, states


def _member(args):
    member, kwargs = args
    run, _ = run_with_jumps(member=member, **kwargs)
    return run


def run_ensemble(members: int, *, workers: int = 1, **kwargs) -> list[JumpRun]:
    """Independent jump trajectories ``0 .. members-1``, ordered by member index."""
    jobs = [(m, kwargs) for m in range(members)]
    if workers <= 1:
        return [_member(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        runs = list(pool.map(_member, jobs))
    return sorted(runs, key=lambda r: r.member)


@dataclass(frozen=True)
class EnsembleSummary:
    members: int
    jumps: int
    minor_jumps: int
    flips: int
    flips_on_minor: int
    expected_minor: float  # sum over jumps of the minor-area share

    @property
    def flips_only_on_minor(self) -> bool:
        return self.flips == self.flips_on_minor

    def as_dict(self):
        return asdict(self)


def summarize(runs) -> EnsembleSummary:
    jumps = [j for r in runs for j in r.jumps]
    minor = [j for j in jumps if j.chosen_peak == "minor"]
    flips = [j for j in jumps if j.flipped]
    expected = 0.0
    for j in jumps:
        areas = np.asarray(j.peak_areas)
        expected += 1.0 - areas.max() / areas.sum()
    return EnsembleSummary(
        members=len(runs), jumps=len(jumps), minor_jumps=len(minor), flips=len(flips),
        flips_on_minor=sum(1 for j in flips if j.chosen_peak == "minor"),
        expected_minor=expected,
    )
