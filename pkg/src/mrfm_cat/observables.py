"""Measurable quantities of a spinor Fock state.

Fock-space contractions are exact; the position-space densities are rendered
on a uniform grid through the orthonormal oscillator eigenfunctions.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .quantum_engine import SpinorFockState

_RESCALE = 1e150


class CoverageWarning(UserWarning):
    """Probability density does not vanish at the edges of the grid."""


@dataclass(frozen=True)
class SpatialGrid:
    z_min: float = -60.0
    z_max: float = 60.0
    points: int = 2401

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ValueError("grid needs z_min < z_max")
        if int(self.points) < 2:
            raise ValueError("grid needs at least two points")

    @property
    def z(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, int(self.points))

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / (int(self.points) - 1)

    @classmethod
    def covering(cls, alpha: complex, points_per_unit: float = 20.0, margin: float = 6.0):
        half = math.sqrt(2.0) * abs(complex(alpha)) + margin
        return cls(-half, half, int(2 * half * points_per_unit) + 1)

    def refined(self, factor: int = 2) -> "SpatialGrid":
        return SpatialGrid(self.z_min, self.z_max, (int(self.points) - 1) * factor + 1)


@dataclass(frozen=True)
class DensitySnapshot:
    tau: float
    grid: SpatialGrid
    p_total: np.ndarray
    p_up: np.ndarray
    p_down: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return self.grid.z

    def integral(self, which: str = "p_total") -> float:
        return float(np.trapezoid(getattr(self, which), dx=self.grid.dz))


def hermite_functions(z: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal oscillator eigenfunctions ``h_k(z)`` for ``k < n``.

    Uses the normalised three-term recurrence
    ``h_{k+1} = z sqrt(2/(k+1)) h_k - sqrt(k/(k+1)) h_{k-1}`` on values
    carrying a separate per-point log scale, so the Gaussian factor never
    underflows before the polynomial part has grown to compensate.
    """
    if n < 1:
        raise ValueError("need at least one basis function")
    z = np.asarray(z, dtype=np.float64)
    out = np.empty((n, z.size))
    logscale = -0.5 * z * z
    prev = np.zeros_like(z)
    cur = np.full_like(z, math.pi ** -0.25)
    out[0] = cur * np.exp(logscale)
    for k in range(n - 1):
        nxt = z * math.sqrt(2.0 / (k + 1)) * cur - math.sqrt(k / (k + 1)) * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > _RESCALE
        if big.any():
            cur[big] /= _RESCALE
            prev[big] /= _RESCALE
            logscale[big] += math.log(_RESCALE)
        out[k + 1] = cur * np.exp(logscale)
    return out


@functools.lru_cache(maxsize=8)
def _cached_basis(z_min, z_max, points, n):
    h = hermite_functions(np.linspace(z_min, z_max, points), n)
    h.flags.writeable = False
    return h


def hermite_basis(grid: SpatialGrid, n: int) -> np.ndarray:
    """Read-only ``(n, points)`` matrix of eigenfunctions on ``grid`` (cached)."""
    return _cached_basis(float(grid.z_min), float(grid.z_max), int(grid.points), int(n))


def significant_size(state: SpinorFockState, cutoff: float = 1e-30) -> int:
    """Number of leading Fock states needed to carry all but ``cutoff`` weight."""
    w = np.abs(state.a) ** 2 + np.abs(state.b) ** 2
    tail = np.cumsum(w[::-1])[::-1]
    idx = np.nonzero(tail > cutoff)[0]
    return int(idx[-1]) + 1 if idx.size else 1


def wavefunctions(state: SpinorFockState, grid: SpatialGrid):
    """Position-space spinor components ``(Psi_up(z), Psi_down(z))``."""
    n = significant_size(state)
    h = hermite_basis(grid, n)
    return state.a[:n] @ h, state.b[:n] @ h


def density(state: SpinorFockState, grid: SpatialGrid | None = None, warn: bool = True) -> DensitySnapshot:
    """``|Psi_up|**2``, ``|Psi_down|**2`` and their sum on ``grid``."""
    grid = grid or SpatialGrid()
    psi_up, psi_down = wavefunctions(state, grid)
    p_up = np.abs(psi_up) ** 2
    p_down = np.abs(psi_down) ** 2
    total = p_up + p_down
    if warn and max(total[0], total[-1]) > 1e-12:
        warnings.warn(f"density at grid edge is {max(total[0], total[-1]):.2e}; widen the grid",
                      CoverageWarning, stacklevel=2)
    return DensitySnapshot(state.tau, grid, total, p_up, p_down)


def populations(state: SpinorFockState) -> tuple[float, float]:
    """Integrated spin-up and spin-down probabilities ``(P11, P22)``."""
    return float(np.vdot(state.a, state.a).real), float(np.vdot(state.b, state.b).real)


def _lowering_overlap(x, y):
    """``sum_n sqrt(n+1) conj(x_n) y_{n+1}``."""
    sq = np.sqrt(np.arange(1, x.size))
    return np.sum(sq * np.conj(x[:-1]) * y[1:])


def means(state: SpinorFockState) -> tuple[float, float, float, float, float]:
    """``(<z>, <p_z>, <S_x>, <S_y>, <S_z>)``."""
    a, b = state.a, state.b
    hop = _lowering_overlap(a, a) + _lowering_overlap(b, b)
    ab = np.vdot(a, b)
    p11, p22 = populations(state)
    return (math.sqrt(2.0) * hop.real, math.sqrt(2.0) * hop.imag,
            float(ab.real), float(ab.imag), 0.5 * (p11 - p22))


def z_spin_moments(state: SpinorFockState) -> tuple[float, float]:
    """``(<z S_x>, <z S_y>)``."""
    a, b = state.a, state.b
    w = (_lowering_overlap(a, b) + np.conj(_lowering_overlap(b, a))) / math.sqrt(2.0)
    return float(w.real), float(w.imag)


def correlations(state: SpinorFockState) -> tuple[float, float]:
    """Spin-oscillator covariances ``R1 = <z S_y> - <z><S_y>``, ``R2 = <z S_x> - <z><S_x>``."""
    z, _, sx, sy, _ = means(state)
    zsx, zsy = z_spin_moments(state)
    return zsy - z * sy, zsx - z * sx


def bloch_length_sq(state: SpinorFockState) -> float:
    _, _, sx, sy, sz = means(state)
    return sx * sx + sy * sy + sz * sz


def mean_occupation(state: SpinorFockState) -> float:
    n = np.arange(state.size)
    return float(np.sum(n * (np.abs(state.a) ** 2 + np.abs(state.b) ** 2)))


def position_variance(state: SpinorFockState) -> float:
    """``<z**2> - <z>**2`` from Fock-space contractions."""
    a, b = state.a, state.b
    n = np.arange(state.size)
    diag = np.sum((2 * n + 1) * (np.abs(a) ** 2 + np.abs(b) ** 2))
    sq2 = np.sqrt((n[:-2] + 1.0) * (n[:-2] + 2.0))
    off = np.sum(sq2 * (np.conj(a[:-2]) * a[2:] + np.conj(b[:-2]) * b[2:]))
    z2 = 0.5 * (diag + 2.0 * off.real)
    z = means(state)[0]
    return float(z2 - z * z)
