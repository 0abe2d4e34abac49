"""Closed-form and residue-series evaluation of amplitudes and observables.

Scaled amplitudes: beta = b / g* for the one-excitation-per-atom sector and
c_scaled = c / (g_a* g_b*) for two-photon amplitudes.  The flat-density
normalization rho(w0)|g0|^2 = gamma/(4 pi) turns mode sums into detuning
integrals:

    P1(t)    = (gamma/4pi) sum_{r,eta} int dD |beta^(r)_eta(D,t)|^2
    rho23(t) = (gamma/4pi) sum_eta     int dD beta^(1) conj(beta^(2))

The per-mode delay equations have characteristic roots
s_k = -gamma/2 - i*D + W_k(sigma r)/tau with r = (gamma tau/2) e^{gamma tau/2 + i phi};
every evaluator here is a branch sum over (sigma, k).  All exponentials are
combined so their real parts are <= 0 before exponentiation (the root
stability bound Re W_k(sigma r) <= gamma*tau/2 guarantees this), and all
colliding-pole denominators are evaluated through exact divided differences,
so the formulas are finite everywhere including the removable points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import sici

from .core import (
    ConvergenceError,
    DomainError,
    LambertSeriesContext,
    SystemParams,
    ValidationError,
    lambert_parameter,
)
from .lambertw import branch_values

# ---------------------------------------------------------------------------
# trivial closed forms


def amp_a(t, params: SystemParams):
    """Both-atoms-excited amplitude a(t) = exp(-gamma t), any delay."""
    return np.exp(-params.gamma * np.asarray(t, dtype=float))


def prob_two_excited(t, params: SystemParams):
    """P2(t) = |a|^2 = exp(-2 gamma t); independent of the delay."""
    return np.exp(-2.0 * params.gamma * np.asarray(t, dtype=float))


def p1_markov_tau0(t, gamma: float = 1.0):
    """Coincident atoms: P1 = 2 gamma t exp(-2 gamma t)."""
    t = np.asarray(t, dtype=float)
    return 2.0 * gamma * t * np.exp(-2.0 * gamma * t)


def p1_markov_independent(t, gamma: float = 1.0):
    """Infinitely distant atoms: P1 = 2 exp(-gamma t)(1 - exp(-gamma t))."""
    x = np.exp(-gamma * np.asarray(t, dtype=float))
    return 2.0 * x * (1.0 - x)


def prob_one_excited_ss(params: SystemParams) -> float:
    """Steady one-excitation probability for phi = n*pi (any tau).

    Two algebraically identical forms are evaluated and cross-checked:
    sinh(x)/((1+x)^2 e^x) and (1 - e^{-2x})/(2 (1+x)^2), x = gamma*tau/2.
    """
    params.require_phi_pi()
    x = 0.5 * params.gamma * params.tau
    form_a = math.sinh(x) / ((1.0 + x) ** 2 * math.exp(x))
    form_b = -math.expm1(-2.0 * x) / (2.0 * (1.0 + x) ** 2)
    if abs(form_a - form_b) > 1e-14 * max(1.0, abs(form_a)):
        raise ValidationError("steady-state closed forms disagree")
    return form_b


def bic_probability(params: SystemParams) -> float:
    """Reported weight of the steady atom-photon bound state, 2 * P1(inf)."""
    return 2.0 * prob_one_excited_ss(params)


def dipole_correlation_ss(params: SystemParams) -> float:
    """Steady Tr[rho sigma+^(1) sigma-^(2)] = -cos(n pi)/2 * P1(inf)."""
    n = params.require_phi_pi()
    return -math.cos(n * math.pi) / 2.0 * prob_one_excited_ss(params)


def steady_state_argmax(lo: float = 1e-3, hi: float = 10.0) -> float:
    """gamma*tau maximizing prob_one_excited_ss, by golden-section search."""
    def f(x):
        s = 0.5 * x
        return -(-math.expm1(-2.0 * s)) / (2.0 * (1.0 + s) ** 2)

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > 1e-10:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# stable exponential primitives


def _exprel(x):
    """(e^x - 1)/x, stable at small |x| (complex-safe)."""
    x = np.asarray(x, dtype=complex)
    small = np.abs(x) < 1e-2
    xs = np.where(small, 0.0, x)
    out = np.where(small,
                   1.0 + x / 2.0 * (1.0 + x / 3.0 * (1.0 + x / 4.0 * (1.0 + x / 5.0))),
                   (np.exp(xs) - 1.0) / np.where(xs == 0, 1.0, xs))
    return out


def _expdiff(c, x):
    """(e^{c+x} - e^c)/x = e^c * exprel(x); callers guarantee Re(c), Re(c+x) <= O(1)."""
    c = np.asarray(c, dtype=complex)
    x = np.asarray(x, dtype=complex)
    small = np.abs(x) < 1e-2
    xs = np.where(small, 1.0, x)
    direct = (np.exp(c + x) - np.exp(c)) / xs
    series = np.exp(c) * (1.0 + x / 2.0 * (1.0 + x / 3.0 * (1.0 + x / 4.0 * (1.0 + x / 5.0))))
    return np.where(small, series, direct)


def _sinc_half(x):
    """sin(x)/x with the x -> 0 limit."""
    return np.sinc(np.asarray(x, dtype=float) / np.pi)


# ---------------------------------------------------------------------------
# free (uncoupled) amplitude and its exact integrals: the quadrature reference


def _position_phase(atom: int, delta, eta: int, params: SystemParams):
    """exp(i k z_r) with k z_r = +/- eta (phi + D tau)/2 (z_1 = +d/2, z_2 = -d/2)."""
    sr = 1.0 if atom == 1 else -1.0
    return np.exp(0.5j * sr * eta * (params.phi + np.asarray(delta) * params.tau))


def amp_b_free(atom: int, delta, eta: int, t, params: SystemParams):
    """Scaled amplitude of an atom decaying with no feedback from its partner.

    Solves beta' = e^{i k z_r} e^{(iD - gamma) t} - (gamma/2) beta, beta(0)=0:
    the exact solution for t < tau and for the delay-disabled mode (where the
    position phase is dropped: infinitely distant atoms have no mode overlap).
    """
    g = params.gamma
    delta = np.asarray(delta, dtype=float)
    t = np.asarray(t, dtype=float)
    lam = 1j * delta - g
    core = (np.exp(lam * t) - np.exp(-0.5 * g * t)) / (1j * delta - 0.5 * g)
    if params.delay_disabled:
        return core
    return _position_phase(atom, delta, eta, params) * core


def p1_free_reference(t, params: SystemParams):
    """Exact (gamma/4pi) sum_{r,eta} int |beta_free|^2 dD = 2 e^{-gt}(1-e^{-gt})."""
    return p1_markov_independent(t, params.gamma)


def rho23_free_reference(t, params: SystemParams):
    """Exact coherence integral of the free amplitudes.

    (cos phi / 2) e^{-gamma tau/2} e^{-gamma t}(1 - e^{-gamma (t-tau)}) for
    t > tau and exactly zero before (causality of the overlap integral).
    Zero in delay-disabled mode.
    """
    if params.delay_disabled:
        return np.zeros_like(np.asarray(t, dtype=float))
    g, tau = params.gamma, params.tau
    t = np.asarray(t, dtype=float)
    out = 0.5 * math.cos(params.phi) * np.exp(-0.5 * g * tau) * np.exp(-g * t) \
        * -np.expm1(-g * (t - tau))
    return np.where(t > tau, out, 0.0)


def amp_b_tau0(atom: int, delta, eta: int, t, params: SystemParams):
    """Coincident atoms (tau = 0): exact solution via the +/- normal modes.

    The symmetric mode decays at gamma(1 + e^{i phi})/2 + gamma/2 and the
    antisymmetric at gamma(1 - e^{i phi})/2 + gamma/2; for the physical
    tau = 0 case phi = 0 and only the symmetric mode is driven.
    """
    g = params.gamma
    delta = np.asarray(delta, dtype=float)
    t = np.asarray(t, dtype=float)
    lam = 1j * delta - g
    out = 0.0
    phase1 = np.exp(0.5j * eta * params.phi)   # e^{i k z_1}, tau = 0
    phase2 = np.conj(phase1)
    for sign, src in ((+1.0, phase1 + phase2), (-1.0, phase1 - phase2)):
        rate = 0.5 * g * (1.0 + sign * np.exp(1j * params.phi))
        # beta_pm(t) = src (e^{lam t} - e^{-rate t})/(lam + rate), exact limit at collision
        denom = lam + rate
        factor = t * _expdiff(-rate * t, denom * t)
        beta_pm = src * factor
        out = out + 0.5 * (beta_pm if atom == 1 else sign * beta_pm)
    return out


# ---------------------------------------------------------------------------
# residue series for the one-photon amplitudes (branch sums over W_k(sigma r))


def _branch_tables(ctx: LambertSeriesContext):
    """(W values, 1/(W + W^2)) for sigma = +1, -1 stacked, cached on ctx."""
    cache = getattr(ctx, "_tables", None)
    if cache is None:
        wp = branch_values(ctx.r, ctx.k_max)
        wm = branch_values(-ctx.r, ctx.k_max)
        w = np.concatenate([wp, wm])
        cache = (w, 1.0 / (w + w * w))
        object.__setattr__(ctx, "_tables", cache)
    return cache


def _series_bracket(w, delta, t: float, params: SystemParams, e: float):
    """Per-branch summand of the residue series, (n_branches, n_delta).

    All exponents are combined so their real parts stay <= 0 (stability bound
    Re W <= gamma tau / 2), and the double pole s_k = -gamma is removable via
    the exact divided difference _expdiff.
    """
    g, tau, phi = params.gamma, params.tau, params.phi
    w = np.asarray(w, dtype=complex)[:, None]
    d = np.asarray(delta, dtype=float)[None, :]
    D = 0.5 * g - 1j * d + w / tau           # s_k + gamma
    bracket = np.exp(-g * t) + (w / tau) * t * _expdiff(-g * t, D * t)
    if t > tau:
        phase_theta = np.exp(1j * ((1.0 - e) * phi - (1.0 + e) * d * tau))
        bracket = bracket - 0.5 * g * phase_theta * (t - tau) \
            * _expdiff(g * (tau - t), D * (t - tau))
    return bracket / (w + w * w)


def _series_tail(delta, t: float, params: SystemParams, e: float,
                 k_max: int) -> np.ndarray:
    """Asymptotic-branch estimate of the residue sum over |k| > k_max.

    Same summand as the retained branches but with W_k ~ u - log u,
    u = Log(sigma r) + 2 pi i k; the (a log K + b)/K remainder of the partial
    sums is removed by the S1 - 4 S2 + 4 S3 ladder combination.
    """
    delta = np.asarray(delta, dtype=float)
    base = max(20 * k_max, 50_000)
    r = lambert_parameter(params)
    logs = [np.log(r), np.log(-r)]

    def span(k_from, k_to):
        out = np.zeros(delta.size, dtype=complex)
        chunk = max(1, (1 << 22) // max(delta.size, 1))
        k = k_from
        while k <= k_to:
            hi = min(k + chunk - 1, k_to)
            ks = np.arange(k, hi + 1)
            for logz in logs:
                for sgn in (1.0, -1.0):
                    u = logz + 2j * np.pi * sgn * ks
                    w = u - np.log(u)
                    out += _series_bracket(w, delta, t, params, e).sum(axis=0)
            k = hi + 1
        return out

    s1 = span(k_max + 1, base)
    s2 = s1 + span(base + 1, 2 * base)
    s3 = s2 + span(2 * base + 1, 4 * base)
    return s1 - 4.0 * s2 + 4.0 * s3


def amp_b_series(atom: int, delta, eta: int, t: float, params: SystemParams,
                 ctx: LambertSeriesContext, check_convergence: bool = False):
    """Scaled amplitude beta^(atom)_eta(delta, t) by the Lambert-branch residue sum.

    Vectorized over delta.  For t < tau the delayed term is absent and the
    result equals amp_b_free.  The overall sign follows the causal ODE
    solution (+tau/2 prefactor from 1/(Y^2 - X^2) = +(tau/2) sum 1/(W+W^2)
    /(s - s_k), fixing a sign slip in the printed time-domain series).
    check_convergence compares the k_max and k_max/2 partial sums and raises
    ConvergenceError if they differ by more than 1e-6.
    """
    if params.tau <= 0:
        raise DomainError("residue series requires tau > 0 (use amp_b_tau0)")
    ctx.check_matches(params)
    t = float(t)
    if t < 0:
        raise DomainError("t must be >= 0")
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    e = (1.0 if atom == 1 else -1.0) * eta

    w, _ = _branch_tables(ctx)
    terms = _series_bracket(w, delta, t, params, e)
    summed = terms.sum(axis=0)
    if ctx.tail_mode == "asymptotic-correction":
        summed = summed + _series_tail(delta, t, params, e, ctx.k_max)

    prefac = (0.5 * params.tau * np.exp(1j * delta * t)
              * np.exp(0.5j * e * (delta * params.tau + params.phi)))
    total = prefac * summed
    if check_convergence:
        ks = np.arange(-ctx.k_max, ctx.k_max + 1)
        sel = np.tile(np.abs(ks) <= ctx.k_max // 2, 2)
        partial = prefac * terms[sel].sum(axis=0)
        diff = float(np.max(np.abs(total - partial)))
        if diff > 1e-6:
            raise ConvergenceError(
                f"amp_b_series not converged at k_max={ctx.k_max}: "
                f"half-sum difference {diff:.3e}", last_estimates=(partial, total))
    return total if total.size > 1 else complex(total[0])


def amp_b_steady(atom: int, delta, eta: int, params: SystemParams):
    """Steady scaled amplitude for phi = n*pi:

    beta_ss = e * exp(i e n pi / 2) * i sin(D tau / 2) / ((1 + g tau/2)(g - i D)),
    with e = +eta for atom 1 and -eta for atom 2 (the overall sign matches
    the causal ODE solution, i.e. the late-time limit of amp_b_series; all
    quadratic observables are insensitive to it).  DomainError off phi = n*pi
    (the amplitudes decay to zero there).
    """
    n = params.require_phi_pi()
    g, tau = params.gamma, params.tau
    delta = np.asarray(delta, dtype=float)
    e = (1.0 if atom == 1 else -1.0) * eta
    return e * np.exp(0.5j * e * n * np.pi) * 1j * np.sin(0.5 * delta * tau) \
        / ((1.0 + 0.5 * g * tau) * (g - 1j * delta))


# ---------------------------------------------------------------------------
# two-photon amplitudes (scaled by 1/(g_a* g_b*))
#
# Convention: these evaluate the printed solution of the pair-sector Laplace
# chain, whose amplitude is twice the orthonormal-basis coefficient of
# |1_a 1_b> (the ansatz sums unordered pairs with c/2).  Born weights
# therefore use the measure (1/8) sum_{eta,eta'} (gamma/4pi)^2 iint |c|^2,
# which is pinned against the full oracle and by the exact tau=0 cascade norm.


def _pair_kernels(dal, dbe, w, t: float, params: SystemParams):
    """(M_ab, N_ab) for arrays of branch values w and detunings dal, dbe.

    Stable everywhere: the removable collisions B_b -> 0 (dark branch) and
    A_a -> 0 (branch pole hitting s = -gamma) are evaluated through exact
    divided differences, picking per element the form that divides by the
    larger of |A_a|, |B_b| (they cannot both be small: A_a - B_b has
    imaginary part >= gamma minus detuning differences... their imaginary
    parts sum to gamma).
    """
    g, tau = params.gamma, params.tau
    aa = dal + 1j * (0.5 * g + w / tau)      # A_alpha
    bb = dbe + 1j * (0.5 * g - w / tau)      # B_beta
    ss = dal + dbe + 1j * g                  # S
    tp = t - tau
    e_t = (-0.5 * g + w / tau - 1j * dal) * t      # E*t, Re <= 0
    e_tp = (-0.5 * g + w / tau - 1j * dal) * tp

    use_b = np.abs(bb) <= np.abs(aa)         # divide by A (B-regular form)
    ga = g - 2j * dal
    gb = g - 2j * dbe
    em_g = np.exp(-g * t)
    em_s = np.exp(-1j * (dal + dbe) * t)

    m_breg = ga / (2.0 * aa * ss) * (em_g - em_s) \
        + (1j * t * w / (tau * aa)) * _expdiff(e_t, -1j * bb * t)
    m_areg = gb / (2.0 * bb * ss) * (em_g - em_s) \
        - (1j * t * w / (tau * bb)) * _expdiff(-g * t, -1j * aa * t)
    m = np.where(use_b, m_breg, m_areg)

    if tp > 0:
        emp_g = np.exp(-g * tp)
        emp_s = np.exp(-1j * (dal + dbe) * tp)
        n_breg = -(1.0 / aa) * ((emp_g - emp_s) / ss
                                - 1j * tp * _expdiff(e_tp, -1j * bb * tp))
        n_areg = -(1.0 / bb) * ((emp_s - emp_g) / ss
                                + 1j * tp * _expdiff(-g * tp, -1j * aa * tp))
        n = np.where(use_b, n_breg, n_areg)
    else:
        n = np.zeros_like(m)
    return m, n


def amp_c2_series(delta_a, eta_a: int, delta_b, eta_b: int, t: float,
                  params: SystemParams, ctx: LambertSeriesContext):
    """Scaled two-photon amplitude c(delta_a,eta_a; delta_b,eta_b; t)/(g* g*).

    Branch sum of the residue solution with the helper kernels M, N; the
    evaluation order of the atom labels matters inside M and N (they are not
    label-symmetric) but the assembled amplitude is symmetric under the
    simultaneous swap (delta_a, eta_a) <-> (delta_b, eta_b).
    """
    if params.tau <= 0:
        raise DomainError("two-photon series requires tau > 0")
    ctx.check_matches(params)
    g, tau, phi = params.gamma, params.tau, params.phi
    t = float(t)
    da, db = np.broadcast_arrays(np.asarray(delta_a, float), np.asarray(delta_b, float))
    shape = da.shape
    da = da.ravel()[None, :]
    db = db.ravel()[None, :]

    w_all, inv_ww2 = _branch_tables(ctx)
    total = np.zeros(da.shape[1], dtype=complex)
    kd_a = eta_a * (da * tau + phi)          # k_{a,eta} d
    kd_b = eta_b * (db * tau + phi)
    cos_m = np.cos(0.5 * (kd_a - kd_b))
    cos_p = np.cos(0.5 * (kd_a + kd_b))
    chunk = max(1, (1 << 21) // max(da.shape[1], 1))
    for lo in range(0, w_all.size, chunk):
        w = w_all[lo:lo + chunk][:, None]
        iw = inv_ww2[lo:lo + chunk][:, None]
        m_ab, n_ab = _pair_kernels(da, db, w, t, params)
        m_ba, n_ba = _pair_kernels(db, da, w, t, params)
        bracket = cos_m * (m_ab + m_ba) - 0.5 * g * np.exp(1j * phi) * cos_p \
            * (n_ab * np.exp(-1j * da * tau) + n_ba * np.exp(-1j * db * tau))
        total += np.sum(iw * bracket, axis=0)
    out = 2.0 * tau * np.exp(1j * (da[0] + db[0]) * t) * total
    out = out.reshape(shape)
    return out if out.shape else complex(out)


def _longtime_components(delta_a, eta_a: int, delta_b, eta_b: int, t: float,
                         params: SystemParams, ctx: LambertSeriesContext):
    """(T_a, T_b, L) with c_infinity = T_a e^{i da t} + T_b e^{i db t} + L.

    T_a, T_b are the escaping-pair pieces (phases kept explicit so callers
    can either evaluate at fixed t or phase-average |c|^2); L is the
    stationary Lambert-branch part.  Requires phi = n*pi.
    """
    n = params.require_phi_pi()
    if params.tau <= 0:
        raise DomainError("long-time form requires tau > 0")
    ctx.check_matches(params)
    g, tau = params.gamma, params.tau
    da, db = np.broadcast_arrays(np.asarray(delta_a, float), np.asarray(delta_b, float))
    shape = da.shape
    da = da.ravel()
    db = db.ravel()

    # escaping part: cos k_- - (-1)^n cos k_+ = 2 eta_a eta_b sin(da tau/2) sin(db tau/2)
    sa = _sinc_half(0.5 * da * tau)          # sin(x)/x forms keep 1/Delta removable
    sb = _sinc_half(0.5 * db * tau)
    sin_a = np.sin(0.5 * da * tau)
    sin_b = np.sin(0.5 * db * tau)
    pref = 2.0 * eta_a * eta_b / (1.0 + 0.5 * g * tau)
    t_a = pref * (0.5 * tau) * sa * sin_b / (db + 1j * g)
    t_b = pref * sin_a * (0.5 * tau) * sb / (da + 1j * g)

    # stationary part: -(tau/(2 S)) sum_k [L_ab / B(da) + L_ba / B(db)]
    w_all, inv_ww2 = _branch_tables(ctx)
    kd_a = eta_a * (da * tau + n * np.pi)
    kd_b = eta_b * (db * tau + n * np.pi)
    cos_m = np.cos(0.5 * (kd_a - kd_b))
    cos_p = np.cos(0.5 * (kd_a + kd_b))
    sgn = (-1.0) ** n
    ss = da + db + 1j * g

    def l_over_b(dx, dy, cm, cp, w, dark):
        """L_{xy} / (dx + i(gamma/2 - W/tau)), dark-branch limit exact.

        L_{xy} = gamma[2 eta_x eta_y sin(dx tau/2) sin(dy tau/2)
                        + (-1)^n cos k_+ (1 - e^{i dx tau})] - 2 i dx cos k_-.
        Every piece carries an explicit dx factor, so the dark-branch
        division by dx is a stable closed form.
        """
        bx = dx + 1j * (0.5 * g - w / tau)
        num = (g * (2.0 * eta_a * eta_b * np.sin(0.5 * dx * tau) * np.sin(0.5 * dy * tau)
                    + sgn * cp * -(1j * dx * tau) * _exprel(1j * dx * tau))
               - 2j * dx * cm)
        generic = num / np.where(np.abs(bx) < 1e-12, 1.0, bx)
        if not np.any(dark):
            return generic
        # dark branch: bx = dx exactly; divide each term's explicit dx out
        lim = (g * (2.0 * eta_a * eta_b * (0.5 * tau) * _sinc_half(0.5 * dx * tau)
                    * np.sin(0.5 * dy * tau)
                    + sgn * cp * (-1j * tau) * _exprel(1j * dx * tau))
               - 2j * cm)
        return np.where(dark, lim, generic)

    l_total = np.zeros(da.size, dtype=complex)
    dark_mask = np.abs(w_all - 0.5 * g * tau) < 1e-9
    chunk = max(1, (1 << 21) // max(da.size, 1))
    for lo in range(0, w_all.size, chunk):
        w = w_all[lo:lo + chunk][:, None]
        iw = inv_ww2[lo:lo + chunk][:, None]
        dark = dark_mask[lo:lo + chunk][:, None]
        term = l_over_b(da[None, :], db[None, :], cos_m, cos_p, w, dark) \
            + l_over_b(db[None, :], da[None, :], cos_m, cos_p, w, dark)
        l_total += np.sum(iw * term, axis=0)
    l_part = -(0.5 * tau / ss) * l_total

    return (t_a.reshape(shape), t_b.reshape(shape),
            (2.0 * l_part).reshape(shape), shape)


def amp_c2_longtime(delta_a, eta_a: int, delta_b, eta_b: int, t: float,
                    params: SystemParams, ctx: LambertSeriesContext):
    """Long-time scaled two-photon amplitude (gamma t >> 1, phi = n*pi).

    The 1/Delta factors of the printed expression are removable (the
    cos-bracket vanishes with either detuning at phi = n*pi); they are
    evaluated through exact sinc/exprel limits.
    """
    t_a, t_b, l_part, shape = _longtime_components(delta_a, eta_a, delta_b,
                                                   eta_b, t, params, ctx)
    da, db = np.broadcast_arrays(np.asarray(delta_a, float), np.asarray(delta_b, float))
    out = 2.0 * (t_a * np.exp(1j * da * t) + t_b * np.exp(1j * db * t)) + l_part
    return out if np.ndim(out) else complex(out)


def two_photon_pair_weight(params: SystemParams,
                           ctx: LambertSeriesContext | None = None,
                           cutoff: float = 60.0, spacing: float = 0.05,
                           k_max_weight: int = 64) -> float:
    """Born weight of the escaped two-photon sector in the long-time limit.

    (1/8) sum_{eta eta'} (gamma/4pi)^2 iint |c_infinity|^2 with the
    oscillatory cross terms phase-averaged away (their integral vanishes as
    t -> infinity); by unitarity this equals 1 - P1(infinity).  The branch
    sum is truncated at k_max_weight (the stationary part converges like
    1/k^2 and this is a 2%-tolerance integral).
    """
    ctx = ctx or LambertSeriesContext.from_params(params, k_max=k_max_weight,
                                                  tail_mode="none")
    if ctx.k_max > k_max_weight:
        ctx = LambertSeriesContext.from_params(params, k_max=k_max_weight,
                                               tail_mode="none")
    n = int(round(cutoff / spacing))
    d = np.linspace(-n * spacing, n * spacing, 2 * n + 1)
    wts = simpson_weights(d.size, spacing)
    dal, dbe = np.meshgrid(d, d, indexing="ij")
    w2 = np.outer(wts, wts)
    total = 0.0
    # joint eta flip is a symmetry: sum over (+,+) and (+,-) counts twice
    for eta_b, mult in ((+1, 2.0), (-1, 2.0)):
        t_a, t_b, l_part, _ = _longtime_components(dal, +1, dbe, eta_b, 0.0,
                                                   params, ctx)
        avg_abs2 = (np.abs(2.0 * t_a) ** 2 + np.abs(2.0 * t_b) ** 2
                    + np.abs(l_part) ** 2)
        total += mult * float(np.sum(w2 * avg_abs2))
    norm = (params.gamma / (4.0 * math.pi)) ** 2
    return 0.125 * norm * total


# ---------------------------------------------------------------------------
# detuning quadrature


@dataclass(frozen=True)
class QuadratureSpec:
    """Detuning quadrature: cutoff half-range, base spacing, refinement tol.

    spacing = 0 selects pi/(8 t_max) automatically; the resolved spacing must
    satisfy spacing <= pi/(4 t_max) so the e^{i D t} oscillations are resolved.
    """

    cutoff: float = 200.0
    spacing: float = 0.0
    tol: float = 1e-4

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ValidationError("cutoff must be > 0")
        if self.spacing < 0:
            raise ValidationError("spacing must be >= 0")
        if self.tol <= 0:
            raise ValidationError("tol must be > 0")

    def resolved_spacing(self, t_max: float) -> float:
        limit = math.pi / (4.0 * max(t_max, 1e-9))
        d = self.spacing if self.spacing > 0 else 0.5 * limit
        if d > limit * (1 + 1e-12):
            raise ValidationError(
                f"spacing {d} too coarse for t_max={t_max}: limit {limit}")
        return d

    def grid(self, t_max: float) -> np.ndarray:
        d = self.resolved_spacing(t_max)
        n = int(math.ceil(self.cutoff / d))
        return np.linspace(-n * d, n * d, 2 * n + 1)


def simpson_weights(n_points: int, spacing: float) -> np.ndarray:
    if n_points < 3 or n_points % 2 == 0:
        raise ValidationError("Simpson rule needs an odd number of points >= 3")
    w = np.ones(n_points)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (spacing / 3.0)


def _beta_pair_at(delta, t, params, ctx):
    """(beta^1_+, beta^2_+) at time t on the delta grid, series evaluation."""
    if params.delay_disabled:
        return (amp_b_free(1, delta, +1, t, params),
                amp_b_free(2, delta, +1, t, params))
    if params.tau == 0:
        return (amp_b_tau0(1, delta, +1, t, params),
                amp_b_tau0(2, delta, +1, t, params))
    if t <= params.tau:
        return (amp_b_free(1, delta, +1, t, params),
                amp_b_free(2, delta, +1, t, params))
    return (amp_b_series(1, delta, +1, t, params, ctx),
            amp_b_series(2, delta, +1, t, params, ctx))


def reduced_blocks_from_betas(delta, weights, b1, b2, t, params: SystemParams):
    """(P1, rho23) from the eta=+1 amplitudes on a quadrature grid.

    Mirror symmetry b^(2)_{D,eta} = b^(1)_{D,-eta} folds the eta sum:
    P1 integrand = 2(|b1|^2 + |b2|^2) and the coherence integrand is
    2 Re(b1 conj b2) (rho23 is real).  The known free-atom part of the
    integrand is subtracted and its exact integral added back, so the
    truncated tail decays like 1/Delta^3 instead of 1/Delta^2.
    """
    g = params.gamma
    norm = g / (4.0 * math.pi)
    f1 = amp_b_free(1, delta, +1, t, params)
    f2 = amp_b_free(2, delta, +1, t, params)
    p1_int = 2.0 * (np.abs(b1) ** 2 + np.abs(b2) ** 2
                    - np.abs(f1) ** 2 - np.abs(f2) ** 2)
    rho_int = 2.0 * np.real(b1 * np.conj(b2) - f1 * np.conj(f2))
    p1 = float(p1_free_reference(t, params)) + norm * float(weights @ p1_int)
    rho23 = float(rho23_free_reference(t, params)) + norm * float(weights @ rho_int)
    return p1, rho23


def _tail_cos_over_sq(a: float, lam: float) -> float:
    """int_lam^inf cos(a x)/x^2 dx (a >= 0)."""
    if a == 0.0:
        return 1.0 / lam
    si, _ = sici(a * lam)
    return math.cos(a * lam) / lam - a * (0.5 * math.pi - si)


def prob_one_excited(t, params: SystemParams, engine: str = "dde-permode",
                     quad: QuadratureSpec | None = None) -> float:
    """P1(t) by detuning quadrature over engine amplitudes.

    engine 'series' evaluates the Lambert residue sums on the grid (the
    cross-check path); 'dde-permode' integrates the per-mode delay equations
    (the production path).  The grid is refined (spacing halved) until the
    relative change is below quad.tol; ConvergenceError carries the last two
    estimates otherwise.
    """
    quad = quad or QuadratureSpec()
    t = float(t)
    estimates = []
    for refine in range(3):
        spec = QuadratureSpec(quad.cutoff, quad.resolved_spacing(max(t, 1e-9)) / 2 ** refine,
                              quad.tol)
        if engine == "series":
            # raw truncation at k_max is well under the quadrature budget;
            # the asymptotic tail is reserved for pointwise high-accuracy use
            ctx = LambertSeriesContext.from_params(params, tail_mode="none")
            delta = spec.grid(max(t, 1e-9))
            wts = simpson_weights(delta.size, spec.resolved_spacing(max(t, 1e-9)))
            b1, b2 = _beta_pair_at(delta, t, params, ctx)
            p1, _ = reduced_blocks_from_betas(delta, wts, b1, b2, t, params)
        elif engine == "dde-permode":
            from .oracle import DdeEngine
            eng = DdeEngine(params, spec)
            _, r22, r33, _ = eng.reduced_blocks(np.array([t]))
            p1 = float(r22[0] + r33[0])
        else:
            raise ValidationError(f"unknown engine {engine!r}")
        estimates.append(p1)
        if len(estimates) >= 2:
            a, b = estimates[-2], estimates[-1]
            if abs(a - b) <= quad.tol * max(abs(b), 1e-12):
                return b
    raise ConvergenceError(
        f"P1 quadrature did not converge at t={t}: {estimates[-2]:.8e} -> {estimates[-1]:.8e}",
        last_estimates=tuple(estimates[-2:]))
