"""Multi-branch complex Lambert W and truncated branch sums with tail control.

W_k(z) solves w*exp(w) = z.  Branches follow the standard convention
(Corless et al.): Im(W_k) near 2*pi*k for large |z|, counterclockwise
continuity on the cuts.  The branch sums

    sum_k 1/(1 + W_k(z))      -> 1/2
    sum_k 1/(W_k(z) + W_k^2)  -> 1/z

converge like 1/k (in symmetric pairs) and 1/k^2; the asymptotic tail
correction replaces the truncated remainder using
W_k(z) ~ log z + 2*pi*i*k - log(log z + 2*pi*i*k).
"""

from __future__ import annotations

import numpy as np

from .core import ConvergenceError, DomainError

_BRANCH_POINT = -np.exp(-1.0)  # -1/e
_MAX_ITER = 100
_RESID_RTOL = 1e-12
_BP_RADIUS = 0.25  # |z + 1/e| below this uses the branch-point series seed


def _bp_series(p: np.ndarray) -> np.ndarray:
    """W near the branch point: series in p = sqrt(2(e z + 1)), w = -1 + p - ..."""
    return -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0 + p * (-43.0 / 540.0))))


def _k_eff(k: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Unwinding index for w + Log(w) = Log(z) + 2*pi*i*k_eff on branch k.

    The relation holds with k_eff = k everywhere except the real section of
    W_{-1} (z real in (-1/e, 0), where the principal Log of the real negative
    root contributes +i*pi instead of -i*pi), which needs k_eff = 0.
    """
    keff = k.astype(float)
    real_sec = (k == -1) & (z.imag == 0) & (z.real > _BRANCH_POINT) & (z.real < 0)
    keff[real_sec] = 0.0
    return keff


def _seed(k: np.ndarray, z: np.ndarray, keff: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-branch starting points; returns (w0, use_defining_form mask).

    The defining-form mask marks points iterated on w*e^w - z directly
    (branch-point neighbourhood, where the log-form derivative vanishes).
    """
    w = np.empty_like(z)
    logz = np.log(z)
    u = logz + 2j * np.pi * keff
    with np.errstate(invalid="ignore", divide="ignore"):
        w[:] = u - np.log(u)

    # principal branch
    m = (k == 0) & (np.abs(z) < 0.5)
    zs = z[m]
    w[m] = zs * (1.0 - zs + 1.5 * zs * zs)
    m = (k == 0) & (np.abs(z) >= 0.5) & (np.abs(logz) < 1.5)
    w[m] = 1.0 + 0.0j  # log-form Newton is global on the principal region

    # real section of W_{-1}
    m = (k == -1) & (keff == 0)
    if np.any(m):
        lz = np.log(-z[m].real).astype(complex)
        w[m] = lz - np.log(-lz)

    # branch-point neighbourhood; the second sheet (-1 - p) belongs to W_{-1}
    # for Im z >= 0 and to W_{+1} for Im z < 0 (counterclockwise continuity)
    near = np.abs(z - _BRANCH_POINT) < _BP_RADIUS
    p = np.sqrt(2.0 * (np.e * z + 1.0))
    m0 = near & (k == 0)
    w[m0] = _bp_series(p[m0])
    msheet = near & (((k == -1) & (z.imag >= 0)) | ((k == 1) & (z.imag < 0)))
    w[msheet] = _bp_series(-p[msheet])
    return w, (m0 | msheet)


def lambert_w(k, z):
    """Evaluate the k-th branch of Lambert W at complex z.

    Broadcasts over k and z.  Postcondition: |w e^w - z| <= 1e-12 |z|
    (checked; ConvergenceError on failure rather than silent garbage).
    DomainError for z = 0 on any branch but k = 0, and for non-finite z.

    Iteration: branch-targeted Newton on the logarithmic form
    w + Log w - Log z - 2*pi*i*k = 0 (which pins the branch index and makes
    the relative residual of w*e^w equal |g| at convergence), seeded from the
    asymptotic expansion or the branch-point series, plus a final Halley
    polish on the defining form.
    """
    k_arr, z_arr = np.broadcast_arrays(np.asarray(k, dtype=int),
                                       np.asarray(z, dtype=complex))
    scalar = z_arr.ndim == 0
    k_flat = np.atleast_1d(k_arr).ravel()
    z_flat = np.atleast_1d(z_arr).ravel().astype(complex)

    if not np.all(np.isfinite(z_flat)):
        raise DomainError("lambert_w: z must be finite")
    zero = z_flat == 0
    if np.any(zero & (k_flat != 0)):
        raise DomainError("lambert_w: W_k(0) diverges for k != 0")

    w = np.zeros_like(z_flat)
    act = ~zero
    if np.any(act):
        w[act] = _solve(k_flat[act], z_flat[act])
    w = w.reshape(z_arr.shape)
    return complex(w) if scalar else w


def _solve(k: np.ndarray, z: np.ndarray) -> np.ndarray:
    keff = _k_eff(k, z)
    w, defining = _seed(k, z, keff)
    target = np.log(z) + 2j * np.pi * keff

    logform = ~defining
    if np.any(logform):
        wl = w[logform]
        tl = target[logform]
        for _ in range(_MAX_ITER):
            g = wl + np.log(wl) - tl
            done = np.abs(g) <= 1e-13
            if np.all(done):
                break
            step = g * wl / (wl + 1.0)
            wl = np.where(done, wl, wl - step)
        w[logform] = wl

    if np.any(defining):
        # plain Newton on w e^w - z; near the double root at w = -1 this is
        # linearly convergent, which the iteration cap comfortably covers
        wd = w[defining]
        zd = z[defining]
        for _ in range(_MAX_ITER):
            ew = np.exp(wd)
            f = wd * ew - zd
            done = np.abs(f) <= 0.2 * _RESID_RTOL * np.abs(zd)
            if np.all(done):
                break
            denom = ew * (wd + 1.0)
            denom = np.where(denom == 0, 1e-300, denom)
            wd = np.where(done, wd, wd - f / denom)
        w[defining] = wd

    # one Halley polish step on the defining form
    ew = np.exp(w)
    f = w * ew - z
    wp1 = np.where(w == -1.0, 1e-300, w + 1.0)
    denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
    w = w - np.where(np.abs(f) > 0, f / denom, 0.0)

    resid = np.abs(w * np.exp(w) - z)
    bad = resid > _RESID_RTOL * np.abs(z)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ConvergenceError(
            f"lambert_w failed for k={k[i]}, z={z[i]}: residual {resid[i]:.3e}",
            last_estimates=(w[i],))
    return w


def branch_values(z: complex, k_max: int) -> np.ndarray:
    """W_k(z) for k = -k_max .. k_max, index order k_max+k."""
    ks = np.arange(-k_max, k_max + 1)
    return lambert_w(ks, np.full(ks.shape, z, dtype=complex))


def _asymptotic_w(z: complex, ks: np.ndarray) -> np.ndarray:
    u = np.log(complex(z)) + 2j * np.pi * ks
    return u - np.log(u)


def _tail_sum(term_of_w, z: complex, k_from: int, k_to: int) -> complex:
    """Sum term_of_w(W_k(z)) over k_from <= |k| <= k_to using asymptotic W.

    Summed in symmetric (+k, -k) pairs (the 1/(1+W) sum converges only in
    that ordering), vectorized in chunks.
    """
    total = 0.0 + 0.0j
    chunk = 1 << 16
    k = k_from
    while k <= k_to:
        hi = min(k + chunk - 1, k_to)
        ks = np.arange(k, hi + 1)
        total += np.sum(term_of_w(_asymptotic_w(z, ks)))
        total += np.sum(term_of_w(_asymptotic_w(z, -ks)))
        k = hi + 1
    return total


def _tail_correction(term_of_w, z: complex, k_max: int) -> complex:
    """Asymptotic estimate of the sum over |k| > k_max.

    The paired terms decay like (a log k + b)/k^2, so the remainder after a
    partial sum to K is R(K) = (a log K + b')/K; with partial sums S1, S2, S3
    to K, 2K, 4K that model is eliminated exactly by S1 - 4 S2 + 4 S3.
    """
    base = max(10_000, 25 * k_max)
    s1 = _tail_sum(term_of_w, z, k_max + 1, base)
    s2 = s1 + _tail_sum(term_of_w, z, base + 1, 2 * base)
    s3 = s2 + _tail_sum(term_of_w, z, 2 * base + 1, 4 * base)
    return s1 - 4.0 * s2 + 4.0 * s3


def _check_branch_sum_domain(z: complex):
    if z == 0:
        raise DomainError("branch sum undefined at z = 0")
    if abs(z - _BRANCH_POINT) < 1e-14:
        raise DomainError("branch sum singular at the branch point z = -1/e")


def branch_sum_one_over_one_plus_w(z, k_max: int = 2000,
                                   tail_mode: str = "asymptotic-correction") -> complex:
    """Partial sum of 1/(1 + W_k(z)) over |k| <= k_max, identity value 1/2."""
    z = complex(z)
    _check_branch_sum_domain(z)
    w = branch_values(z, k_max)
    s = complex(np.sum(1.0 / (1.0 + w)))
    if tail_mode == "asymptotic-correction":
        s += _tail_correction(lambda ww: 1.0 / (1.0 + ww), z, k_max)
    return s


def branch_sum_one_over_w_plus_w2(z, k_max: int = 2000,
                                  tail_mode: str = "asymptotic-correction") -> complex:
    """Partial sum of 1/(W_k(z) + W_k(z)^2) over |k| <= k_max, identity value 1/z."""
    z = complex(z)
    _check_branch_sum_domain(z)
    w = branch_values(z, k_max)
    s = complex(np.sum(1.0 / (w + w * w)))
    if tail_mode == "asymptotic-correction":
        s += _tail_correction(lambda ww: 1.0 / (ww + ww * ww), z, k_max)
    return s
