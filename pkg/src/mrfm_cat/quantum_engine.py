"""Spinor Fock-basis dynamics of a spin-1/2 coupled to a quantum oscillator.

The reduced rotating-frame Hamiltonian is::

    H = (p**2 + z**2) / 2 + phi_dot(tau) S_z - rabi S_x - 2 coupling z S_z

and the state is ``sum_n A_n |n, up> + B_n |n, down>``. With
``z = (a + a^dagger) / sqrt(2)`` the amplitudes obey::

    i dA_n = (n + 1/2 + phi_dot/2) A_n - c (sqrt(n) A_{n-1} + sqrt(n+1) A_{n+1}) - rabi/2 B_n
    i dB_n = (n + 1/2 - phi_dot/2) B_n + c (sqrt(n) B_{n-1} + sqrt(n+1) B_{n+1}) - rabi/2 A_n

with ``c = coupling / sqrt(2)``. ``eq12_verbatim=True`` swaps the sign of the
``phi_dot`` term on the down line, which turns ``phi_dot`` into a global
phase; it exists only for comparison runs.

By default the amplitudes are propagated in the interaction picture of the
oscillator, ``a_n = exp(i (n + 1/2) tau) A_n``, which removes the stiff
diagonal and leaves phase factors ``exp(+-i tau)`` on the hopping terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numba as nb
import numpy as np
from scipy import stats

from .drive import DriveProfile, phi_dot_kernel
from .integrator import Stepper, Tolerances, snapshot_times

INTERACTION = "interaction"
RAW = "raw"
PICTURES = (INTERACTION, RAW)


class TruncationError(RuntimeError):
    """The Fock basis is too small for the state it has to carry."""


class BasisTooSmallError(TruncationError):
    def __init__(self, message, required):
        super().__init__(message)
        self.required = required


@dataclass(frozen=True)
class SpinorFockState:
    """Spin-up and spin-down Fock amplitudes at reduced time ``tau``."""

    a: np.ndarray
    b: np.ndarray
    tau: float = 0.0

    def __post_init__(self):
        a = np.ascontiguousarray(self.a, dtype=np.complex128)
        b = np.ascontiguousarray(self.b, dtype=np.complex128)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("a and b must be 1-d arrays of equal length")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def size(self) -> int:
        return self.a.size

    def norm(self) -> float:
        return float(np.vdot(self.a, self.a).real + np.vdot(self.b, self.b).real)

    def tail_mass(self) -> float:
        return float(abs(self.a[-1]) ** 2 + abs(self.b[-1]) ** 2)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.a, self.b])

    @classmethod
    def from_stacked(cls, y, tau=0.0):
        n = y.size // 2
        return cls(y[:n].copy(), y[n:].copy(), tau)


@dataclass(frozen=True)
class CoherentInit:
    """Coherent cantilever state ``|alpha>`` times a spin direction.

    The spinor is ``(cos(theta/2), exp(i phi) sin(theta/2))``; the default is
    spin up.
    """

    alpha: complex
    spin_theta: float = 0.0
    spin_phi: float = 0.0

    @classmethod
    def from_means(cls, mean_z: float, mean_p: float, spin_theta=0.0, spin_phi=0.0):
        return cls(complex(mean_z, mean_p) / math.sqrt(2.0), spin_theta, spin_phi)

    @property
    def mean_z(self) -> float:
        a = complex(self.alpha)
        return ((a.conjugate() + a) / math.sqrt(2.0)).real

    @property
    def mean_p(self) -> float:
        a = complex(self.alpha)
        return (1j * (a.conjugate() - a) / math.sqrt(2.0)).real


def required_basis_size(alpha: complex, loss: float = 1e-10) -> int:
    """Smallest ``N`` whose truncated Poisson weight exceeds ``1 - loss``."""
    mu = abs(complex(alpha)) ** 2
    if mu == 0.0:
        return 1
    return int(stats.poisson.isf(loss, mu)) + 1


def coherent_amplitudes(alpha: complex, n: int) -> np.ndarray:
    """``alpha**k / sqrt(k!) exp(-|alpha|**2 / 2)`` for ``k < n``.

    Built from the ratio recursion ``c_{k+1} = c_k alpha / sqrt(k + 1)``,
    accumulated in log-magnitude so that large ``|alpha|`` does not underflow
    the vacuum term.
    """
    alpha = complex(alpha)
    out = np.zeros(n, dtype=np.complex128)
    r = abs(alpha)
    if r == 0.0:
        out[0] = 1.0
        return out
    k = np.arange(n)
    steps = np.empty(n)
    steps[0] = -0.5 * r * r
    steps[1:] = math.log(r) - 0.5 * np.log(k[1:])
    logmag = np.cumsum(steps)
    out[:] = np.exp(logmag) * np.exp(1j * math.atan2(alpha.imag, alpha.real) * k)
    return out


def coherent_state(init: CoherentInit, n: int, loss: float = 1e-10) -> SpinorFockState:
    """Coherent oscillator state times a spinor, renormalised after truncation."""
    c = coherent_amplitudes(init.alpha, n)
    kept = float(np.vdot(c, c).real)
    if kept < 1.0 - loss:
        need = required_basis_size(init.alpha, loss)
        raise BasisTooSmallError(
            f"basis of {n} states keeps only {kept:.3e} of the coherent state; need N >= {need}", need)
    c /= math.sqrt(kept)
    up = math.cos(0.5 * init.spin_theta)
    down = complex(math.cos(init.spin_phi), math.sin(init.spin_phi)) * math.sin(0.5 * init.spin_theta)
    return SpinorFockState(up * c, down * c, 0.0)


# p layout shared by the kernels
_P_RABI, _P_COUPLING, _P_DRIVE, _P_BSIGN, _P_ROT = 0, 1, 2, 7, 8


def pack_params(drive: DriveProfile, rabi: float, coupling: float, *, picture=INTERACTION,
                eq12_verbatim=False) -> np.ndarray:
    if picture not in PICTURES:
        raise ValueError(f"picture must be one of {PICTURES}")
    return np.concatenate([
        [rabi, coupling], drive.as_array(),
        [1.0 if eq12_verbatim else -1.0, 1.0 if picture == INTERACTION else 0.0],
    ])


@nb.njit(cache=True)
def _apply_h(t, y, out, p, sq):
    """``out = H y`` (or its interaction-picture counterpart)."""
    n = y.size // 2
    rabi = p[0]
    c = p[1] / math.sqrt(2.0)
    pd = phi_dot_kernel(t, p[2], p[3], p[4], p[5], p[6])
    bsign = p[7]
    rot = p[8] != 0.0
    if rot:
        up = complex(math.cos(t), math.sin(t))
        dn = up.conjugate()
    else:
        up = 1.0 + 0.0j
        dn = 1.0 + 0.0j
    ha = 0.5 * pd
    hb = 0.5 * bsign * pd
    hr = 0.5 * rabi
    for k in range(n):
        sa = 0.0j
        sb = 0.0j
        if k > 0:
            sa += sq[k] * up * y[k - 1]
            sb += sq[k] * up * y[n + k - 1]
        if k < n - 1:
            sa += sq[k + 1] * dn * y[k + 1]
            sb += sq[k + 1] * dn * y[n + k + 1]
        va = ha * y[k] - c * sa - hr * y[n + k]
        vb = hb * y[n + k] + c * sb - hr * y[k]
        if not rot:
            va += (k + 0.5) * y[k]
            vb += (k + 0.5) * y[n + k]
        out[k] = va
        out[n + k] = vb


@nb.njit(cache=True)
def spinor_rhs_kernel(t, y, out, p, sq):
    _apply_h(t, y, out, p, sq)
    for k in range(y.size):
        v = out[k]
        out[k] = complex(v.imag, -v.real)


def _sqrt_table(n):
    return np.sqrt(np.arange(n + 1, dtype=np.float64))


def apply_hamiltonian(state: SpinorFockState, phi_dot_value: float, rabi: float, coupling: float,
                      eq12_verbatim: bool = False):
    """Action of the Schrodinger-picture Hamiltonian at fixed ``phi_dot``.

    Returns the pair ``(H psi)_up, (H psi)_down``.
    """
    p = pack_params(_constant_drive(phi_dot_value), rabi, coupling, picture=RAW,
                    eq12_verbatim=eq12_verbatim)
    y = state.stacked()
    out = np.empty_like(y)
    _apply_h(0.0, y, out, p, _sqrt_table(state.size))
    n = state.size
    return out[:n], out[n:]


def rhs(state: SpinorFockState, phi_dot_value: float, rabi: float, coupling: float,
        eq12_verbatim: bool = False):
    """Time derivatives ``(dA/dtau, dB/dtau)`` in the Schrodinger picture."""
    ha, hb = apply_hamiltonian(state, phi_dot_value, rabi, coupling, eq12_verbatim)
    return -1j * ha, -1j * hb


def energy(state: SpinorFockState, phi_dot_value: float, rabi: float, coupling: float,
           eq12_verbatim: bool = False) -> float:
    ha, hb = apply_hamiltonian(state, phi_dot_value, rabi, coupling, eq12_verbatim)
    return float((np.vdot(state.a, ha) + np.vdot(state.b, hb)).real)


def _constant_drive(value):
    return DriveProfile(float(value), 0.0, math.inf, 0.0, 0.0)


def _rotation(n, tau):
    return np.exp(1j * (np.arange(n) + 0.5) * tau)


@dataclass
class Health:
    """Numerical health bookkeeping for one propagation."""

    initial_norm: float = 1.0
    max_norm_drift: float = 0.0
    max_tail_mass: float = 0.0
    steps_accepted: int = 0
    steps_rejected: int = 0

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class Trajectory:
    snapshots: list = field(default_factory=list)
    health: Health = field(default_factory=Health)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.tau for s in self.snapshots])

    @property
    def final(self) -> SpinorFockState:
        return self.snapshots[-1]

    def __len__(self):
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)


class Propagator:
    """Advances a :class:`SpinorFockState` under a drive profile.

    Parameters
    ----------
    drive : DriveProfile
    rabi, coupling : float
        Reduced Rabi frequency and spin-cantilever coupling.
    tolerances : Tolerances, optional
        Per-step relative/absolute error targets of the DOP853 stepper.
    picture : {"interaction", "raw"}
    eq12_verbatim : bool
    tail_tol : float
        Abort threshold for ``|A_{N-1}|**2 + |B_{N-1}|**2``.
    """

    def __init__(self, drive: DriveProfile, rabi: float, coupling: float, *,
                 tolerances: Tolerances | None = None, picture: str = INTERACTION,
                 eq12_verbatim: bool = False, tail_tol: float = 1e-10):
        self.drive = drive
        self.rabi = float(rabi)
        self.coupling = float(coupling)
        self.picture = picture
        self.eq12_verbatim = eq12_verbatim
        self.tolerances = tolerances or Tolerances()
        self.tail_tol = tail_tol
        self._p = pack_params(drive, rabi, coupling, picture=picture, eq12_verbatim=eq12_verbatim)

    def iterate(self, state: SpinorFockState, tau_end: float, stride: float = 0.08,
                health: Health | None = None) -> Iterator[SpinorFockState]:
        """Yield snapshots at ``state.tau + k * stride`` through ``tau_end``."""
        n = state.size
        health = health if health is not None else Health()
        health.initial_norm = state.norm()
        stepper = Stepper(spinor_rhs_kernel, self._p, _sqrt_table(n), self.tolerances)
        rot = self.picture == INTERACTION
        # counts accumulate when a caller resumes with the same Health
        base_acc, base_rej = health.steps_accepted, health.steps_rejected
        tau = state.tau
        y = state.stacked()
        if rot:
            r = _rotation(n, tau)
            y[:n] *= r
            y[n:] *= r
        for t_out in snapshot_times(tau, tau_end, stride):
            stepper.advance(y, tau, t_out)
            tau = float(t_out)
            health.steps_accepted = base_acc + stepper.stats.accepted
            health.steps_rejected = base_rej + stepper.stats.rejected
            if rot:
                r = np.conj(_rotation(n, tau))
                snap = SpinorFockState(y[:n] * r, y[n:] * r, tau)
            else:
                snap = SpinorFockState(y[:n].copy(), y[n:].copy(), tau)
            drift = abs(snap.norm() - health.initial_norm)
            health.max_norm_drift = max(health.max_norm_drift, drift)
            tail = snap.tail_mass()
            health.max_tail_mass = max(health.max_tail_mass, tail)
            if tail >= self.tail_tol:
                raise TruncationError(
                    f"tail mass {tail:.3e} at tau={tau:.4f} exceeds {self.tail_tol:.1e}; "
                    f"enlarge the basis beyond N={n}")
            yield snap

    def evolve(self, state: SpinorFockState, tau_end: float, stride: float = 0.08,
               keep: Callable[[SpinorFockState], bool] | None = None,
               include_initial: bool = True) -> Trajectory:
        traj = Trajectory()
        if include_initial:
            traj.snapshots.append(state)
        for snap in self.iterate(state, tau_end, stride, traj.health):
            if keep is None or keep(snap) or snap.tau >= tau_end:
                traj.snapshots.append(snap)
        return traj


def evolve(state: SpinorFockState, drive: DriveProfile, rabi: float, coupling: float,
           tau_end: float, *, stride: float = 0.08, tolerances: Tolerances | None = None,
           picture: str = INTERACTION, eq12_verbatim: bool = False,
           tail_tol: float = 1e-10) -> Trajectory:
    """Propagate ``state`` to ``tau_end`` and collect snapshots every ``stride``."""
    prop = Propagator(drive, rabi, coupling, tolerances=tolerances, picture=picture,
                      eq12_verbatim=eq12_verbatim, tail_tol=tail_tol)
    return prop.evolve(state, tau_end, stride)

