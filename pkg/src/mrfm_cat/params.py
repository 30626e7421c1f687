"""Physical and reduced parameters of the spin-cantilever system.

The cantilever is reduced to a unit-frequency oscillator: energies are
measured in units of the oscillator quantum ``hbar * omega_c``, lengths in
units of the zero-point scale ``Z_c`` and time in units of ``1 / omega_c``.
Exact resonance between the rf carrier and the Larmor frequency is assumed,
so only the frequency modulation of the carrier survives in the rotating
frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from scipy import constants

HBAR = constants.hbar


class ParameterError(ValueError):
    """Raised when a parameter set violates its domain."""


@dataclass(frozen=True)
class PhysicalParams:
    """Laboratory-scale description of an MRFM experiment.

    Parameters
    ----------
    cantilever_frequency : float
        ``omega_c / 2 pi`` in Hz.
    force_constant : float
        Spring constant ``k_c`` in N/m.
    rf_field : float
        Rotating-field amplitude ``B_1`` in T.
    field_gradient : float
        ``dB_z/dZ`` at the spin in T/m. Zero decouples the spin.
    gyromagnetic_ratio : float
        ``gamma / 2 pi`` in Hz/T.
    quality_factor : float
        Cantilever ``Q_c``; only used as a time horizon.
    effective_spin_count : float
        Thermal polarisation ``Delta N`` (1 for a single spin).
    """

    cantilever_frequency: float
    force_constant: float
    rf_field: float
    field_gradient: float
    gyromagnetic_ratio: float
    quality_factor: float = 1.0e3
    effective_spin_count: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "field_gradient":
                ok = value >= 0.0
            elif f.name == "effective_spin_count":
                ok = value >= 1.0
            else:
                ok = value > 0.0
            if not (ok and math.isfinite(value)):
                raise ParameterError(f"{f.name} out of range: {value!r}")

    @property
    def omega_c(self) -> float:
        """Angular cantilever frequency in rad/s."""
        return 2.0 * math.pi * self.cantilever_frequency

    @property
    def gamma(self) -> float:
        """Angular gyromagnetic ratio in rad/(s T)."""
        return 2.0 * math.pi * self.gyromagnetic_ratio


@dataclass(frozen=True)
class OscillatorQuanta:
    """Natural units of the cantilever oscillator."""

    energy_quantum: float
    force_quantum: float
    length_quantum: float
    momentum_quantum: float


@dataclass(frozen=True)
class DimensionlessParams:
    """Reduced model parameters.

    ``rabi`` is the reduced Rabi frequency, ``coupling`` the reduced
    spin-cantilever force and ``basis_size`` the number of retained
    oscillator Fock states.
    """

    rabi: float
    coupling: float
    basis_size: int = 2000

    def __post_init__(self):
        if not self.rabi > 0.0:
            raise ParameterError(f"rabi must be positive, got {self.rabi!r}")
        if not self.coupling >= 0.0:
            raise ParameterError(f"coupling must be non-negative, got {self.coupling!r}")
        if int(self.basis_size) < 2:
            raise ParameterError(f"basis_size must be >= 2, got {self.basis_size!r}")


def oscillator_quanta(p: PhysicalParams) -> OscillatorQuanta:
    e_c = HBAR * p.omega_c
    return OscillatorQuanta(
        energy_quantum=e_c,
        force_quantum=math.sqrt(p.force_constant * e_c),
        length_quantum=math.sqrt(e_c / p.force_constant),
        momentum_quantum=HBAR / math.sqrt(e_c / p.force_constant),
    )


def reduce(p: PhysicalParams, basis_size: int = 2000) -> tuple[OscillatorQuanta, DimensionlessParams]:
    """Convert laboratory parameters to oscillator quanta and reduced parameters.

    The spin magnetic moment enters as ``g mu = hbar gamma``.

    Examples
    --------
    >>> q, d = reduce(PhysicalParams(1.4e3, 1e-3, 1.2e-3, 600.0, 4.3e7))
    >>> round(d.rabi, 1)
    36.9
    """
    q = oscillator_quanta(p)
    rabi = p.gamma * p.rf_field / p.omega_c
    coupling = HBAR * p.gamma * p.field_gradient / (2.0 * q.force_quantum)
    return q, DimensionlessParams(rabi=rabi, coupling=coupling, basis_size=basis_size)


def time_to_dimensionless(t: float, p: PhysicalParams) -> float:
    """Reduced time ``tau = omega_c t``."""
    return p.omega_c * t


def length_to_physical(z: float, p: PhysicalParams) -> float:
    """Dimensional cantilever displacement (m) for a reduced coordinate."""
    return z * oscillator_quanta(p).length_quantum


# Proton MRFM experiment on ammonium nitrate.
EXPERIMENT = PhysicalParams(
    cantilever_frequency=1.4e3,
    force_constant=1.0e-3,
    rf_field=1.2e-3,
    field_gradient=600.0,
    gyromagnetic_ratio=4.3e7,
    quality_factor=1.0e3,
    effective_spin_count=2.9e9,
)
