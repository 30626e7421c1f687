"""Classical many-spin limit of the spin-cantilever dynamics.

With spin-cantilever correlations neglected and the thermal moment written as
``Delta N * S``::

    dz/dtau = p
    dp/dtau = -z + 2 coupling DeltaN S_z
    dS/dtau = S x b,    b = (rabi, 0, -phi_dot + 2 coupling z)

``pin_sz=True`` replaces the spin by the prescribed ``S_z = cos(tau) / 2``,
the resonant drive whose exact response from rest is
``z = DeltaN coupling tau sin(tau) / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .drive import DriveProfile, phi_dot_kernel
from .integrator import Stepper, Tolerances, snapshot_times
from .params import HBAR, PhysicalParams, reduce


@dataclass(frozen=True)
class ClassicalState:
    z: float
    p: float
    s: tuple = (0.0, 0.0, 0.5)
    tau: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.z, self.p, *self.s], dtype=np.float64)

    @property
    def energy(self) -> float:
        return 0.5 * (self.p ** 2 + self.z ** 2)

    @property
    def spin_length(self) -> float:
        return math.sqrt(sum(c * c for c in self.s))


@dataclass(frozen=True)
class ClassicalParams:
    rabi: float
    coupling: float
    spin_count: float
    drive: DriveProfile
    pin_sz: bool = False

    def __post_init__(self):
        if self.spin_count < 1:
            raise ValueError("effective spin count must be >= 1")

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.rabi, self.coupling, self.spin_count],
                               self.drive.as_array(), [1.0 if self.pin_sz else 0.0]])


@nb.njit(cache=True)
def classical_rhs_kernel(t, y, out, p, aux):
    rabi, coupling, count = p[0], p[1], p[2]
    z, pz, sx, sy, sz = y[0], y[1], y[2], y[3], y[4]
    out[0] = pz
    if p[8] != 0.0:
        out[1] = -z + coupling * count * math.cos(t)
        out[2] = 0.0
        out[3] = 0.0
        out[4] = 0.0
        return
    out[1] = -z + 2.0 * coupling * count * sz
    bx = rabi
    bz = -phi_dot_kernel(t, p[3], p[4], p[5], p[6], p[7]) + 2.0 * coupling * z
    # S x b with b_y = 0
    out[2] = sy * bz
    out[3] = sz * bx - sx * bz
    out[4] = -sy * bx


def classical_rhs(state: ClassicalState, params: ClassicalParams, tau: float | None = None) -> ClassicalState:
    """Time derivative of ``state`` packed as a ClassicalState."""
    t = state.tau if tau is None else tau
    out = np.empty(5)
    classical_rhs_kernel(t, state.as_array(), out, params.as_array(), np.empty(0))
    return ClassicalState(out[0], out[1], (out[2], out[3], out[4]), t)


@dataclass
class ClassicalTrajectory:
    tau: np.ndarray
    z: np.ndarray
    p: np.ndarray
    s: np.ndarray  # (len, 3)
    steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def energy(self) -> np.ndarray:
        return 0.5 * (self.z ** 2 + self.p ** 2)

    @property
    def amplitude(self) -> np.ndarray:
        return np.hypot(self.z, self.p)

    @property
    def spin_length(self) -> np.ndarray:
        return np.linalg.norm(self.s, axis=1)

    def spin_length_drift(self) -> float:
        return float(np.max(np.abs(self.spin_length - self.spin_length[0])))

    def state(self, k: int) -> ClassicalState:
        return ClassicalState(float(self.z[k]), float(self.p[k]), tuple(self.s[k]), float(self.tau[k]))

    def columns(self) -> dict:
        return {"tau": self.tau, "z": self.z, "p_z": self.p, "E0": self.energy,
                "S_x": self.s[:, 0], "S_y": self.s[:, 1], "S_z": self.s[:, 2]}


def evolve_classical(state: ClassicalState, params: ClassicalParams, tau_end: float, *,
                     stride: float = 0.08, tolerances: Tolerances | None = None) -> ClassicalTrajectory:
    """Integrate the classical equations, sampling every ``stride``."""
    times = np.concatenate([[state.tau], snapshot_times(state.tau, tau_end, stride)])
    y = state.as_array()
    stepper = Stepper(classical_rhs_kernel, params.as_array(), np.empty(0), tolerances)
    rows = np.empty((times.size, 5))
    rows[0] = y
    t = state.tau
    for k in range(1, times.size):
        stepper.advance(y, t, times[k])
        t = times[k]
        rows[k] = y
    return ClassicalTrajectory(times, rows[:, 0].copy(), rows[:, 1].copy(), rows[:, 2:].copy(),
                               steps=stepper.stats.accepted)


def resonant_envelope(spin_count: float, coupling: float, tau):
    """Envelope ``DeltaN coupling tau / 2`` of the resonantly driven response."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be non-negative")
    out = 0.5 * spin_count * coupling * tau
    return out if out.ndim else float(out)


def stationary_amplitude(spin_count: float, coupling: float, quality_factor: float) -> float:
    """Stationary amplitude estimate ``DeltaN coupling Q_c`` at ``tau = Q_c``."""
    return spin_count * coupling * quality_factor


def nonlinearity_ratio(z_amplitude: float, coupling: float, rabi: float) -> float:
    """Longitudinal field from the cantilever relative to the transverse field."""
    return 2.0 * coupling * abs(z_amplitude) / rabi


def cycle_maxima(tau: np.ndarray, values: np.ndarray, period: float = 2 * math.pi, start: float | None = None):
    """Maximum of ``values`` within consecutive windows of length ``period``.

    Returns ``(times_of_maxima, maxima)`` for complete windows only.
    """
    tau = np.asarray(tau)
    values = np.asarray(values)
    t0 = tau[0] if start is None else start
    valid = tau >= t0
    k = np.floor((tau - t0) / period + 1e-12).astype(int)
    n = int(np.floor((tau[-1] - t0) / period + 1e-12))
    times, maxima = [], []
    for w in range(n):
        sel = np.nonzero(valid & (k == w))[0]
        if sel.size:
            i = sel[np.argmax(values[sel])]
            times.append(float(tau[i]))
            maxima.append(float(values[i]))
    return np.array(times), np.array(maxima)


@dataclass
class DimensionalTrajectory:
    t: np.ndarray  # s
    Z: np.ndarray  # m
    P: np.ndarray  # kg m / s
    M: np.ndarray  # J/T, shape (len, 3)


def evolve_dimensional(phys: PhysicalParams, drive: DriveProfile, Z0: float, P0: float,
                       t_end: float, *, spin=(0.0, 0.0, 0.5), stride: float = 0.08,
                       tolerances: Tolerances | None = None) -> DimensionalTrajectory:
    """Classical dynamics in SI units via the reduced solver.

    ``drive`` is expressed in reduced units; the magnetic moment is
    ``M = gamma hbar DeltaN S``.
    """
    q, d = reduce(phys)
    params = ClassicalParams(d.rabi, d.coupling, phys.effective_spin_count, drive)
    s0 = ClassicalState(Z0 / q.length_quantum, P0 / q.momentum_quantum, tuple(spin))
    traj = evolve_classical(s0, params, phys.omega_c * t_end, stride=stride, tolerances=tolerances)
    moment = phys.gamma * HBAR * phys.effective_spin_count
    return DimensionalTrajectory(traj.tau / phys.omega_c, traj.z * q.length_quantum,
                                 traj.p * q.momentum_quantum, traj.s * moment)


def correspondence_state(quantum_means) -> ClassicalState:
    """Classical initial condition matching quantum means ``(z, p, Sx, Sy, Sz)``."""
    z, p, sx, sy, sz = quantum_means
    return ClassicalState(z, p, (sx, sy, sz))

