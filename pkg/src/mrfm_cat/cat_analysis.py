"""Peak structure of cantilever position densities.

A snapshot is split into basins, one per accepted local maximum of the
total density; basin boundaries sit at the density minimum between adjacent
peaks and the outer basins extend to the grid edges. Every derived quantity
(areas, spin content) is a trapezoid integral over a basin, so the basins
partition the grid exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .observables import DensitySnapshot

DEFAULT_PROMINENCE = 1e-4
PERSISTENCE = 3


@dataclass(frozen=True)
class CatReport:
    """Peaks of one density snapshot, ordered by position."""

    tau: float
    peak_indices: tuple
    peak_positions: tuple
    peak_amplitudes: tuple
    peak_areas: tuple
    basin_edges: tuple  # len n_peaks + 1 grid indices, inclusive bounds
    per_peak_spin: tuple  # ((up_area, down_area), ...)

    @property
    def n_peaks(self) -> int:
        return len(self.peak_positions)

    def dominant(self) -> tuple[int, int] | None:
        """Indices ``(major, minor)`` of the two tallest peaks."""
        if self.n_peaks < 2:
            return None
        order = np.argsort(self.peak_amplitudes)[::-1]
        return int(order[0]), int(order[1])

    @property
    def separation_d(self) -> float | None:
        dom = self.dominant()
        if dom is None:
            return None
        return abs(self.peak_positions[dom[0]] - self.peak_positions[dom[1]])

    @property
    def amplitude_ratio(self) -> float | None:
        dom = self.dominant()
        if dom is None:
            return None
        return self.peak_amplitudes[dom[0]] / self.peak_amplitudes[dom[1]]

    @property
    def area_ratio(self) -> float | None:
        dom = self.dominant()
        if dom is None:
            return None
        return self.peak_areas[dom[0]] / self.peak_areas[dom[1]]

    @property
    def minor_side(self) -> str | None:
        dom = self.dominant()
        if dom is None:
            return None
        return "right" if self.peak_positions[dom[1]] > self.peak_positions[dom[0]] else "left"


def _segment_integral(y, lo, hi, dz):
    if hi <= lo:
        return 0.0
    return float(np.trapezoid(y[lo:hi + 1], dx=dz))


def detect_peaks(snapshot: DensitySnapshot, prominence_floor: float = DEFAULT_PROMINENCE) -> CatReport:
    """Find the peaks of ``snapshot.p_total`` and integrate their basins.

    Peaks are local maxima whose prominence exceeds
    ``prominence_floor * max(p_total)``.
    """
    p = np.asarray(snapshot.p_total)
    top = float(p.max()) if p.size else 0.0
    if not top > 0.0:
        raise ValueError("density is identically zero")
    idx, _ = find_peaks(p, prominence=prominence_floor * top)
    if idx.size == 0:
        # monotone density: the maximum sits on the boundary
        idx = np.array([int(np.argmax(p))])
    z = snapshot.z
    dz = snapshot.grid.dz
    edges = [0]
    for left, right in zip(idx[:-1], idx[1:]):
        edges.append(int(left + np.argmin(p[left:right + 1])))
    edges.append(p.size - 1)

    areas, spin = [], []
    for k in range(idx.size):
        lo, hi = edges[k], edges[k + 1]
        areas.append(_segment_integral(p, lo, hi, dz))
        spin.append((_segment_integral(snapshot.p_up, lo, hi, dz),
                     _segment_integral(snapshot.p_down, lo, hi, dz)))
    return CatReport(
        tau=float(snapshot.tau),
        peak_indices=tuple(int(i) for i in idx),
        peak_positions=tuple(float(z[i]) for i in idx),
        peak_amplitudes=tuple(float(p[i]) for i in idx),
        peak_areas=tuple(areas),
        basin_edges=tuple(edges),
        per_peak_spin=tuple(spin),
    )


def per_peak_spin_content(snapshot: DensitySnapshot, report: CatReport) -> list[tuple[float, float]]:
    """Spin-up and spin-down fractions of each basin."""
    if report.n_peaks < 1:
        raise ValueError("report has no peaks")
    dz = snapshot.grid.dz
    out = []
    for k in range(report.n_peaks):
        lo, hi = report.basin_edges[k], report.basin_edges[k + 1]
        up = _segment_integral(snapshot.p_up, lo, hi, dz)
        down = _segment_integral(snapshot.p_down, lo, hi, dz)
        total = up + down
        out.append((up / total, down / total) if total > 0 else (0.0, 0.0))
    return out


@dataclass(frozen=True)
class SplitCycle:
    split_tau: float
    merge_tau: float | None
    minor_side: str
    max_separation: float
    max_amplitude_ratio: float  # ratio at the snapshot of maximal separation


@dataclass
class SplittingSeries:
    taus: np.ndarray
    n_peaks: np.ndarray
    separation: np.ndarray  # NaN where no cat
    cycles: list = field(default_factory=list)

    @property
    def split_times(self) -> np.ndarray:
        return np.array([c.split_tau for c in self.cycles])

    @property
    def first_split(self) -> float | None:
        return self.cycles[0].split_tau if self.cycles else None

    @property
    def cycle_interval(self) -> float | None:
        """Mean time between successive splits."""
        t = self.split_times
        return float(np.mean(np.diff(t))) if t.size >= 2 else None

    @property
    def period(self) -> float | None:
        """Mean recurrence time of splits with the minor peak on the same side.

        Successive cycles put the minor peak on alternating sides, so one full
        period of the pattern spans two cycles.
        """
        gaps = []
        for side in ("left", "right"):
            t = np.array([c.split_tau for c in self.cycles if c.minor_side == side])
            gaps.extend(np.diff(t))
        return float(np.mean(gaps)) if gaps else None

    @property
    def max_separation(self) -> float:
        s = self.separation[np.isfinite(self.separation)]
        return float(s.max()) if s.size else 0.0

    def sides_alternate(self) -> bool:
        sides = [c.minor_side for c in self.cycles]
        return all(a != b for a, b in zip(sides[:-1], sides[1:]))


def splitting_series(reports, persistence: int = PERSISTENCE) -> SplittingSeries:
    """Fold a time-ordered report sequence into split/merge cycles.

    A split is a transition from one peak to two or more that lasts at least
    ``persistence`` consecutive snapshots; the cycle ends at the next
    single-peak snapshot.
    """
    reports = list(reports)
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    taus = np.array([r.tau for r in reports])
    if np.any(np.diff(taus) <= 0):
        raise ValueError("reports must be strictly time ordered")
    n_peaks = np.array([r.n_peaks for r in reports])
    sep = np.array([r.separation_d if r.separation_d is not None else np.nan for r in reports])
    cat = n_peaks >= 2
    cycles = []
    i = 1
    while i < len(reports):
        if cat[i] and not cat[i - 1]:
            j = i
            while j < len(reports) and cat[j]:
                j += 1
            if j - i >= persistence:
                seg = range(i, j)
                best = max(seg, key=lambda k: sep[k])
                cycles.append(SplitCycle(
                    split_tau=float(taus[i]),
                    merge_tau=float(taus[j]) if j < len(reports) else None,
                    minor_side=reports[best].minor_side,
                    max_separation=float(sep[best]),
                    max_amplitude_ratio=float(reports[best].amplitude_ratio),
                ))
            i = j
        else:
            i += 1
    return SplittingSeries(taus, n_peaks, sep, cycles)
