"""Adaptive Dormand-Prince 8(5,3) stepping compiled with numba.

The right-hand side is any jitted function with signature
``rhs(t, y, out, p, aux)`` writing ``dy/dt`` into ``out``; ``p`` and ``aux``
are float64 parameter arrays forwarded untouched. The same driver serves the
complex spinor amplitudes and the real classical state vector.

Error control follows the usual RMS norm of the blended 5th/3rd order
estimates with ``scale = atol + rtol * max(|y|, |y_new|)``. No
renormalisation or projection is applied to the solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from . import _dop853_tableau as tab

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0

OK = 0
STEP_UNDERFLOW = 1


class StiffnessError(RuntimeError):
    """Step size collapsed below the representable resolution."""


@dataclass(frozen=True)
class Tolerances:
    rtol: float = 1e-12
    atol: float = 1e-15

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    last_step: float = 0.0


_CACHE = {}


def make_advance(rhs):
    """Build a jitted ``advance(y, t0, t1, h, p, aux, rtol, atol)``.

    ``y`` is updated in place. Returns ``(status, t, h, accepted, rejected)``
    where ``h`` is the step proposal for the next call.
    """
    if rhs in _CACHE:
        return _CACHE[rhs]

    A, B, C, E3, E5 = tab.A, tab.B, tab.C, tab.E3, tab.E5
    n_stages = tab.N_STAGES

    @nb.njit
    def advance(y, t0, t1, h, p, aux, rtol, atol):
        m = y.size
        K = np.empty((n_stages + 1, m), dtype=y.dtype)
        ytmp = np.empty_like(y)
        ynew = np.empty_like(y)
        t = t0
        nacc = 0
        nrej = 0
        if t1 <= t0:
            return OK, t, h, nacc, nrej
        if h <= 0.0:
            h = 1e-3 * (t1 - t0)
        rhs(t, y, K[0], p, aux)
        order_exp = -1.0 / 8.0
        while t < t1:
            hmin = 1e-14 * max(1.0, abs(t))
            if h < hmin:
                return STEP_UNDERFLOW, t, h, nacc, nrej
            last = False
            if t + h >= t1:
                h_used = t1 - t
                last = True
            else:
                h_used = h
            for s in range(1, n_stages):
                for j in range(m):
                    acc = K[0, j] * A[s, 0]
                    for k in range(1, s):
                        acc += A[s, k] * K[k, j]
                    ytmp[j] = y[j] + h_used * acc
                rhs(t + C[s] * h_used, ytmp, K[s], p, aux)
            for j in range(m):
                acc = B[0] * K[0, j]
                for k in range(1, n_stages):
                    acc += B[k] * K[k, j]
                ynew[j] = y[j] + h_used * acc
            rhs(t + h_used, ynew, K[n_stages], p, aux)

            e5 = 0.0
            e3 = 0.0
            for j in range(m):
                sc = atol + rtol * max(abs(y[j]), abs(ynew[j]))
                a5 = E5[0] * K[0, j]
                a3 = E3[0] * K[0, j]
                for k in range(1, n_stages + 1):
                    a5 += E5[k] * K[k, j]
                    a3 += E3[k] * K[k, j]
                r5 = abs(a5) / sc
                r3 = abs(a3) / sc
                e5 += r5 * r5
                e3 += r3 * r3
            if e5 == 0.0 and e3 == 0.0:
                err = 0.0
            else:
                err = abs(h_used) * e5 / math.sqrt((e5 + 0.01 * e3) * m)

            if err <= 1.0:
                t = t1 if last else t + h_used
                for j in range(m):
                    y[j] = ynew[j]
                    K[0, j] = K[n_stages, j]
                nacc += 1
                if err == 0.0:
                    fac = MAX_FACTOR
                else:
                    fac = min(MAX_FACTOR, SAFETY * err ** order_exp)
                # a truncated final step says nothing about the next one
                if not last or h_used >= h:
                    h = h_used * fac
            else:
                nrej += 1
                h = h_used * max(MIN_FACTOR, SAFETY * err ** order_exp)
        return OK, t, h, nacc, nrej

    _CACHE[rhs] = advance
    return advance


def snapshot_times(tau0: float, tau_end: float, stride: float) -> np.ndarray:
    """Output grid ``tau0 + k * stride`` up to ``tau_end`` (which is always included)."""
    if not tau_end > tau0:
        raise ValueError("tau_end must exceed the initial time")
    if not stride > 0:
        raise ValueError("stride must be positive")
    k = int(math.floor((tau_end - tau0) / stride + 1e-9))
    times = tau0 + stride * np.arange(1, k + 1)
    if times.size == 0 or tau_end - times[-1] > 1e-9 * max(1.0, tau_end):
        times = np.append(times, tau_end)
    else:
        times[-1] = tau_end
    return times


class Stepper:
    """Stateful wrapper that advances a vector to successive output times."""

    def __init__(self, rhs, p, aux, tolerances: Tolerances | None = None, first_step: float = 0.0):
        self._advance = make_advance(rhs)
        self.p = np.ascontiguousarray(p, dtype=np.float64)
        self.aux = np.ascontiguousarray(aux, dtype=np.float64)
        self.tol = tolerances or Tolerances()
        self.h = float(first_step)
        self.stats = StepStats()

    def advance(self, y: np.ndarray, t0: float, t1: float) -> float:
        status, t, h, nacc, nrej = self._advance(
            y, float(t0), float(t1), self.h, self.p, self.aux, self.tol.rtol, self.tol.atol)
        self.stats.accepted += nacc
        self.stats.rejected += nrej
        if status == STEP_UNDERFLOW:
            raise StiffnessError(f"step size underflow at t={t:.6g} (h={h:.3g})")
        self.h = h
        self.stats.last_step = h
        return t
