"""Frequency-modulation profiles for cyclic adiabatic inversion.

A profile is a linear ramp of the carrier phase rate ``phi_dot`` followed by
a sinusoidal modulation::

    phi_dot(tau) = offset + slope * tau            tau <= ramp_end
                 = amplitude * sin(tau - origin)   tau >  ramp_end
"""

from __future__ import annotations

import math
from dataclasses import dataclass, astuple

import numba as nb
import numpy as np


@dataclass(frozen=True)
class DriveProfile:
    ramp_offset: float
    ramp_slope: float
    ramp_end: float
    modulation_amplitude: float
    modulation_phase_origin: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    def continuity_gap(self) -> float:
        """Jump of ``phi_dot`` across ``ramp_end``."""
        left = self.ramp_offset + self.ramp_slope * self.ramp_end
        right = self.modulation_amplitude * math.sin(self.ramp_end - self.modulation_phase_origin)
        return abs(left - right)

    def is_continuous(self, tol: float = 1e-9) -> bool:
        return self.continuity_gap() < tol


PRESETS = {
    "fig3": DriveProfile(-600.0, 30.0, 20.0, 100.0, 20.0),
    "fig4": DriveProfile(-6000.0, 300.0, 20.0, 1000.0, 20.0),
    # constant phi_dot = 0: plain Rabi nutation about x
    "off": DriveProfile(0.0, 0.0, 0.0, 0.0, 0.0),
}
PRESETS["fig2"] = PRESETS["fig3"]


def preset(name: str) -> DriveProfile:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown drive preset {name!r}; known: {sorted(PRESETS)}") from None


def constant(value: float) -> DriveProfile:
    """Profile with a time-independent ``phi_dot``."""
    return DriveProfile(float(value), 0.0, math.inf, 0.0, 0.0)


@nb.njit(cache=True)
def phi_dot_kernel(tau, offset, slope, end, amplitude, origin):
    if tau <= end:
        return offset + slope * tau
    return amplitude * math.sin(tau - origin)


def phi_dot(profile: DriveProfile, tau):
    """Carrier phase rate at reduced time ``tau`` (scalar or array)."""
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0):
        raise ValueError("phi_dot is defined for tau >= 0 only")
    p = profile
    out = np.where(t <= p.ramp_end,
                   p.ramp_offset + p.ramp_slope * t,
                   p.modulation_amplitude * np.sin(t - p.modulation_phase_origin))
    return out if out.ndim else float(out)


def phi_ddot(profile: DriveProfile, tau):
    """Analytic derivative of :func:`phi_dot`; right-hand limit at ``ramp_end``."""
    t = np.asarray(tau, dtype=float)
    p = profile
    out = np.where(t < p.ramp_end,
                   p.ramp_slope + 0.0 * t,
                   p.modulation_amplitude * np.cos(t - p.modulation_phase_origin))
    return out if out.ndim else float(out)


def adiabaticity_margin(profile: DriveProfile, rabi: float, tau_range, samples: int = 20001) -> float:
    """Largest ``|phi_ddot| / rabi**2`` over ``tau_range``.

    Fast adiabatic inversion needs this well below one; callers usually warn
    above 0.1. The maximum is taken over a dense sample of the interval plus
    the analytic extrema of the sinusoid that fall inside it.
    """
    if not rabi > 0:
        raise ValueError("rabi must be positive")
    lo, hi = float(tau_range[0]), float(tau_range[1])
    if not hi > lo:
        raise ValueError("empty tau range")
    taus = [np.linspace(lo, hi, samples)]
    # cos(tau - origin) = +-1 at origin + k pi
    p = profile
    k0 = math.ceil((lo - p.modulation_phase_origin) / math.pi)
    k1 = math.floor((hi - p.modulation_phase_origin) / math.pi)
    if k1 >= k0 and k1 - k0 < 10**6:
        taus.append(p.modulation_phase_origin + math.pi * np.arange(k0, k1 + 1))
    t = np.concatenate(taus)
    return float(np.max(np.abs(phi_ddot(profile, t)))) / rabi**2
