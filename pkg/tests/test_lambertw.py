import math

import numpy as np
import pytest
from scipy.special import lambertw as scipy_lambertw

from delayqed.core import ConvergenceError, DomainError
from delayqed.lambertw import (
    branch_sum_one_over_one_plus_w,
    branch_sum_one_over_w_plus_w2,
    branch_values,
    lambert_w,
)

RNG = np.random.default_rng(20240817)


def test_trivial_values():
    assert lambert_w(0, 0) == 0
    assert abs(lambert_w(0, math.e) - 1.0) < 1e-14
    x = 0.4475
    assert abs(lambert_w(0, x * math.exp(x)) - x) < 1e-14
    assert abs(lambert_w(-1, -math.exp(-1.0)) - (-1.0)) < 1e-6


def test_domain_errors():
    with pytest.raises(DomainError):
        lambert_w(1, 0.0)
    with pytest.raises(DomainError):
        lambert_w(-3, 0.0)
    with pytest.raises(DomainError):
        lambert_w(0, complex(np.inf, 0))


def test_residual_property_random_annulus():
    # 10^4 random (k, z) in the annulus 1e-3 <= |z| <= 1e3, k in [-50, 50]
    n = 10_000
    z = np.exp(RNG.uniform(np.log(1e-3), np.log(1e3), n)) \
        * np.exp(1j * RNG.uniform(-np.pi, np.pi, n))
    k = RNG.integers(-50, 51, n)
    w = lambert_w(k, z)
    resid = np.abs(w * np.exp(w) - z) / np.abs(z)
    assert resid.max() <= 1e-12


def test_agrees_with_scipy_everywhere():
    n = 4000
    z = np.exp(RNG.uniform(np.log(1e-3), np.log(1e3), n)) \
        * np.exp(1j * RNG.uniform(-np.pi, np.pi, n))
    k = RNG.integers(-30, 31, n)
    w = lambert_w(k, z)
    ws = scipy_lambertw(z, k)
    assert np.all(np.abs(w - ws) <= 1e-8 * (1 + np.abs(ws)))


def test_agrees_with_scipy_near_branch_point():
    n = 2000
    z = -math.exp(-1.0) + RNG.uniform(1e-6, 0.5, n) * np.exp(1j * RNG.uniform(0, 2 * np.pi, n))
    k = RNG.integers(-2, 3, n)
    w = lambert_w(k, z)
    ws = scipy_lambertw(z, k)
    assert np.all(np.abs(w - ws) <= 1e-7 * (1 + np.abs(ws)))


def test_conjugation_symmetry_off_cut():
    # W_{-k}(conj z) = conj(W_k(z)) away from the negative real axis
    n = 1000
    z = np.exp(RNG.uniform(np.log(1e-2), np.log(1e2), n)) \
        * np.exp(1j * RNG.uniform(-np.pi + 0.05, np.pi - 0.05, n))
    k = RNG.integers(-20, 21, n)
    w1 = lambert_w(-k, np.conj(z))
    w2 = np.conj(lambert_w(k, z))
    assert np.all(np.abs(w1 - w2) <= 1e-10 * (1 + np.abs(w2)))


def test_branch_values_layout():
    vals = branch_values(0.5 + 0.2j, 3)
    assert vals.shape == (7,)
    assert abs(vals[3] - lambert_w(0, 0.5 + 0.2j)) == 0.0


def test_identity_sums_reach_limits():
    # r for gamma*tau = 0.895, phi = pi
    x = 0.4475
    r = x * math.exp(x) * np.exp(1j * math.pi)
    s = branch_sum_one_over_one_plus_w(r, 2000, "asymptotic-correction")
    assert abs(s - 0.5) < 1e-6
    r2 = 0.25 * math.exp(0.25)  # gamma*tau = 0.5, phi = 0
    s2 = branch_sum_one_over_w_plus_w2(r2, 2000, "asymptotic-correction")
    assert abs(s2 - 1.0 / r2) < 1e-6
    s3 = branch_sum_one_over_w_plus_w2(2.0, 500, "asymptotic-correction")
    assert abs(s3 - 0.5) < 1e-8


def test_truncation_error_visible_without_tail():
    x = 0.4475
    r = x * math.exp(x) * np.exp(1j * math.pi)
    coarse = abs(branch_sum_one_over_one_plus_w(r, 1, "none") - 0.5)
    fine = abs(branch_sum_one_over_one_plus_w(r, 1000, "none") - 0.5)
    assert coarse > fine
    assert fine > 1e-7  # raw truncation alone cannot reach the 1e-6 budget


def test_tail_corrected_error_monotone_on_doubling_ladder():
    x = 0.4475
    r = x * math.exp(x) * np.exp(1j * math.pi)
    errs1 = [abs(branch_sum_one_over_one_plus_w(r, K) - 0.5)
             for K in (250, 500, 1000, 2000)]
    errs2 = [abs(branch_sum_one_over_w_plus_w2(r, K) - 1.0 / r)
             for K in (250, 500, 1000, 2000)]
    assert all(a > b for a, b in zip(errs1, errs1[1:]))
    assert all(a > b for a, b in zip(errs2, errs2[1:]))


def test_branch_point_domain_error():
    with pytest.raises(DomainError):
        branch_sum_one_over_w_plus_w2(-math.exp(-1.0), 100)
    with pytest.raises(DomainError):
        branch_sum_one_over_one_plus_w(0.0, 100)
