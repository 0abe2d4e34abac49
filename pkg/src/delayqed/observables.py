"""Reduced atomic density matrix, concurrence, correlations, SBE detection.

Basis order (|e1 e2>, |e1 g2>, |g1 e2>, |g1 g2>).  Partial trace over the
orthogonal field sectors of the two-excitation state forces every coherence
linking different excitation numbers to vanish; those zeros are hard-coded
rather than computed, so quadrature noise cannot leak into the Wootters
formula through them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConsistencyError, DelayQedError, SystemParams
from .analytic import QuadratureSpec

PSD_TOL = 1e-9


class PsdViolationError(DelayQedError):
    """Reduced density matrix lost positive semidefiniteness (quadrature failure)."""


@dataclass(frozen=True)
class AtomDensityMatrix:
    """4x4 two-qubit density matrix with the enforced block structure.

    Only rho22, rho33 (populations), the (2,3) coherence and the corner
    populations rho11, rho44 are nonzero.  Hermiticity, unit trace and
    positive semidefiniteness are validated on construction.
    """

    matrix: np.ndarray

    @classmethod
    def from_blocks(cls, rho11: float, rho22: float, rho33: float,
                    rho23: complex, rho44: float | None = None) -> "AtomDensityMatrix":
        if rho44 is None:
            rho44 = 1.0 - (rho11 + rho22 + rho33)
        m = np.zeros((4, 4), dtype=complex)
        m[0, 0] = rho11
        m[1, 1] = rho22
        m[2, 2] = rho33
        m[3, 3] = rho44
        m[1, 2] = rho23
        m[2, 1] = np.conj(rho23)
        obj = cls(matrix=m)
        obj.validate()
        return obj

    def validate(self):
        m = self.matrix
        if abs(np.trace(m) - 1.0) > 1e-9:
            raise PsdViolationError(f"trace {np.trace(m)} != 1")
        if np.max(np.abs(m - m.conj().T)) > 1e-12:
            raise PsdViolationError("matrix not Hermitian")
        evals = np.linalg.eigvalsh(m)
        if evals.min() < -PSD_TOL:
            raise PsdViolationError(f"negative eigenvalue {evals.min():.3e}")

    @property
    def rho23(self) -> complex:
        return complex(self.matrix[1, 2])

    @property
    def rho32(self) -> complex:
        return complex(self.matrix[2, 1])


def reduced_density(t: float, params: SystemParams, engine) -> AtomDensityMatrix:
    """Reduced atomic density matrix at time t from an engine.

    engine provides reduced_blocks(times) -> (rho11, rho22, rho33, rho23).
    """
    r11, r22, r33, r23 = engine.reduced_blocks(np.array([float(t)]))
    return AtomDensityMatrix.from_blocks(float(np.real(r11[0])), float(np.real(r22[0])),
                                         float(np.real(r33[0])), complex(r23[0]))


def concurrence(rho: AtomDensityMatrix) -> float:
    """Wootters concurrence, cross-checked against the block-structure shortcut.

    The full construction (spin-flipped R = rho (sy x sy) rho* (sy x sy),
    sqrt-eigenvalue differences) and C = 2 max(0, |rho23| - sqrt(rho11 rho44))
    must agree to 1e-10; disagreement signals a structurally invalid input.
    """
    m = rho.matrix
    sy = np.array([[0.0, -1j], [1j, 0.0]])
    flip = np.kron(sy, sy)
    r = m @ flip @ m.conj() @ flip
    evals = np.linalg.eigvals(r)
    lam = np.sqrt(np.sort(np.abs(np.real(evals)))[::-1])
    c_full = max(0.0, float(lam[0] - lam[1] - lam[2] - lam[3]))

    c_block = max(0.0, 2.0 * (abs(m[1, 2]) - math.sqrt(abs(m[0, 0] * m[3, 3]))))
    if abs(c_full - c_block) > 1e-10:
        raise ConsistencyError(
            f"concurrence methods disagree: full={c_full:.12e} block={c_block:.12e}")
    return c_full


def dipole_correlation(t: float, params: SystemParams, engine) -> complex:
    """Tr[rho sigma+^(1) sigma-^(2)] = rho32 of the reduced density matrix."""
    return reduced_density(t, params, engine).rho32


def instantaneous_rate(times: np.ndarray, p1: np.ndarray) -> np.ndarray:
    """-dP1/dt by central differences (one-sided at the ends), uniform grid."""
    times = np.asarray(times, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if times.size < 5:
        raise DelayQedError("instantaneous_rate needs at least 5 samples")
    h = times[1] - times[0]
    if not np.allclose(np.diff(times), h, rtol=1e-9, atol=1e-12):
        raise DelayQedError("instantaneous_rate requires a uniform time grid")
    out = np.empty_like(p1)
    out[1:-1] = (p1[2:] - p1[:-2]) / (2.0 * h)
    out[0] = (p1[1] - p1[0]) / h
    out[-1] = (p1[-1] - p1[-2]) / h
    return -out


@dataclass
class EntanglementTrace:
    """Concurrence trajectory with the sudden-birth time when present."""

    times: np.ndarray
    concurrence: np.ndarray
    t_sbe: float | None = None
    steady_value: float | None = None


def concurrence_trace(params: SystemParams, engine, times=None) -> EntanglementTrace:
    """Sampled concurrence from engine blocks (block shortcut, validated)."""
    if times is None:
        times = params.times
    times = np.asarray(times, dtype=float)
    r11, r22, r33, r23 = engine.reduced_blocks(times)
    vals = np.empty(times.size)
    for i in range(times.size):
        rho = AtomDensityMatrix.from_blocks(float(np.real(r11[i])), float(np.real(r22[i])),
                                            float(np.real(r33[i])), complex(r23[i]))
        vals[i] = concurrence(rho)
    trace = EntanglementTrace(times=times, concurrence=vals)
    if abs(times[-1] - params.t_max) < 1e-9 and params.phi_pi_index() is not None:
        trace.steady_value = float(vals[-1])
    return trace


def detect_sbe(trace: EntanglementTrace, eps: float = 1e-4,
               refine=None, resolution: float = 1e-3) -> float | None:
    """First time the concurrence exceeds eps, or None.

    With a refine callback (t_lo, t_hi) -> (times, concurrence) the bracketing
    interval is re-sampled down to the requested resolution; otherwise the
    first crossing sample is returned.
    """
    above = np.nonzero(trace.concurrence > eps)[0]
    if above.size == 0:
        return None
    i = int(above[0])
    if i == 0:
        return float(trace.times[0])
    t_lo, t_hi = float(trace.times[i - 1]), float(trace.times[i])
    if refine is not None:
        while t_hi - t_lo > resolution:
            n = max(8, int(math.ceil((t_hi - t_lo) / resolution)) + 1)
            n = min(n, 64)
            ts, cs = refine(t_lo, t_hi, n)
            above = np.nonzero(cs > eps)[0]
            if above.size == 0:
                return float(t_hi)
            j = int(above[0])
            if j == 0:
                break
            t_lo, t_hi = float(ts[j - 1]), float(ts[j])
    return float(t_hi)


def sbe_time(params: SystemParams, engine, eps: float = 1e-4,
             resolution: float = 1e-3) -> float | None:
    """detect_sbe over the standard sample grid with engine-backed refinement."""
    trace = concurrence_trace(params, engine)

    def refine(t_lo, t_hi, n):
        ts = np.linspace(t_lo, t_hi, n)
        r11, r22, r33, r23 = engine.reduced_blocks(ts)
        cs = np.array([
            concurrence(AtomDensityMatrix.from_blocks(
                float(np.real(r11[i])), float(np.real(r22[i])),
                float(np.real(r33[i])), complex(r23[i])))
            for i in range(n)])
        return ts, cs

    return detect_sbe(trace, eps=eps, refine=refine, resolution=resolution)
