"""Expected information, confidence intervals, and the fit orchestration.

Estimation works on per-million rates tau; a level at dilution u contributes
through the per-well rates ``lam = u * tau``.  Standard errors come from the
expected Fisher information, which needs the design fraction q of positive
wells sequenced at each level (recovered as m / M_P when not recorded).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import poisson
from .assay import MultiDilutionAssay
from .poisson import ExtremeOutcome, classify_extreme
from .optimize import OptOptions, maximize
from .special import log1mexp, log_binom, nint, normal_quantile

__all__ = [
    "SingularInformationError",
    "FisherInfo",
    "FitResult",
    "expected_m",
    "expected_y",
    "fisher_information",
    "fisher_information_multi",
    "covariance",
    "wald_ci",
    "multi_log_likelihood",
    "multi_gradient",
    "observed_information",
    "level_params",
    "fit_mle",
]


class SingularInformationError(RuntimeError):
    """The information matrix cannot be inverted reliably."""


@dataclass
class FisherInfo:
    matrix: np.ndarray
    at: np.ndarray


@dataclass
class FitResult:
    """Point estimates and Wald inference for the per-million rates.

    ``tau_hat`` has one entry per detected lineage; for a fit without any
    sequencing information it holds the single total-rate parameter, so
    ``iupm == sum(tau_hat)`` either way.  ``bias`` is set by the
    bias-corrected fit.  ``active_lower`` lists components held at zero by a
    bounded fit (interval then unreliable near the boundary).
    """

    tau_hat: np.ndarray
    iupm: float
    covariance: np.ndarray
    se_iupm: float
    ci: tuple[float, float]
    alpha: float
    log_lik: float
    converged: bool
    iterations: int
    extreme: ExtremeOutcome
    bias: np.ndarray | None = None
    clamped: int = 0
    active_lower: tuple[int, ...] = field(default_factory=tuple)


def _binom_log_weights(M: int, log_p: float, log_1mp: float) -> np.ndarray:
    """log Binomial(M, p) pmf over k = 0..M, with 0 * (-inf) treated as 0."""
    k = np.arange(M + 1, dtype=float)
    lg = np.array([log_binom(M, int(kk)) for kk in range(M + 1)])
    out = lg.copy()
    if M > 0:
        out += np.where(k > 0, k * log_p, 0.0)
        out += np.where(M - k > 0, (M - k) * log_1mp, 0.0)
    return out


def expected_m(Lambda: float, M: int, q: float) -> float:
    """Expected number of sequenced positive wells.

    The number of negative wells is Binomial(M, e^{-Lambda}); the sequenced
    count is the nearest integer to q times the positive count, so the
    expectation is a finite sum over that distribution.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    if Lambda <= 0.0 or q == 0.0:
        return 0.0
    log_w = _binom_log_weights(M, -Lambda, log1mexp(Lambda))
    seq = np.array([nint(q * (M - k)) for k in range(M + 1)], dtype=float)
    return float(np.exp(log_w) @ seq)


def _expected_y_factor(Lambda: float, M: int, q: float) -> float:
    """Sum over the positive-well count k of C(M,k) <qk> (1-e^-L)^{k-1} e^{-L(M-k)}."""
    if Lambda <= 0.0 or q == 0.0:
        return 0.0
    l1m = log1mexp(Lambda)
    total = 0.0
    for k in range(1, M + 1):
        seq = nint(q * k)
        if seq == 0:
            continue
        total += seq * math.exp(log_binom(M, k) + (k - 1) * l1m - Lambda * (M - k))
    return total


def expected_y(lam, Lambda: float, M: int, q: float):
    """Expected per-lineage count of sequenced positive wells; vectorized in lam."""
    lam = np.asarray(lam, dtype=float)
    factor = _expected_y_factor(Lambda, M, q)
    return -np.expm1(-lam) * factor


def fisher_information(lam, M: int, q: float) -> FisherInfo:
    """Expected information for the per-well rates at one dilution level.

    Diagonal: E(Y_i) e^{lam_i} / (e^{lam_i}-1)^2 plus a common term; every
    off-diagonal entry equals the common term, which is driven by the
    expected number of unsequenced positive wells.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(lam <= 0):
        raise ValueError("fisher_information requires strictly positive rates")
    Lam = float(lam.sum())
    tL = math.expm1(Lam)
    Em = expected_m(Lam, M, q)
    common = (M - M * math.exp(-Lam) - Em) * (tL + 1.0) / (tL * tL)
    t = np.expm1(lam)
    diag = expected_y(lam, Lam, M, q) * (t + 1.0) / (t * t) + common
    matrix = np.full((lam.size, lam.size), common)
    np.fill_diagonal(matrix, diag)
    return FisherInfo(matrix=matrix, at=lam.copy())


def fisher_information_multi(tau, levels) -> FisherInfo:
    """Expected information for per-million rates over several levels.

    ``levels`` is a sequence of (u, M, q) design triples; each contributes
    u^2 times its per-well information evaluated at u * tau.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    total = np.zeros((tau.size, tau.size))
    for u, M, q in levels:
        total += u * u * fisher_information(u * tau, M, q).matrix
    return FisherInfo(matrix=total, at=tau.copy())


def covariance(info, cond_limit: float = 1e12) -> np.ndarray:
    """Invert an information matrix, refusing ill-conditioned input."""
    matrix = info.matrix if isinstance(info, FisherInfo) else np.asarray(info, dtype=float)
    cond = np.linalg.cond(matrix)
    if not math.isfinite(cond) or cond > cond_limit:
        raise SingularInformationError(
            f"information matrix of size {matrix.shape[0]} is singular or "
            f"ill-conditioned (condition estimate {cond:.3e})"
        )
    cov = np.linalg.inv(matrix)
    return (cov + cov.T) / 2.0


def wald_ci(iupm: float, se: float, alpha: float = 0.05) -> tuple[float, float]:
    """Wald interval built on the log scale, so the endpoints stay positive.

    Endpoints are iupm * exp(+-z * se / iupm).  Degenerate inputs (zero or
    infinite estimate) give the matching degenerate interval.
    """
    if se < 0:
        raise ValueError("se must be non-negative")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if iupm == 0.0:
        return (0.0, 0.0)
    if math.isinf(iupm):
        return (math.inf, math.inf)
    if iupm < 0:
        raise ValueError("iupm must be non-negative")
    half = normal_quantile(1.0 - alpha / 2.0) * se / iupm
    upper = iupm * math.exp(half) if half < 700.0 else math.inf
    return (iupm * math.exp(-half) if half < 700.0 else 0.0, upper)


def multi_log_likelihood(tau, assay: MultiDilutionAssay) -> float:
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    return sum(poisson.log_likelihood(lv.u * tau, lv) for lv in assay.levels)


def multi_gradient(tau, assay: MultiDilutionAssay) -> np.ndarray:
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.zeros(tau.size)
    for lv in assay.levels:
        out += lv.u * poisson.gradient(lv.u * tau, lv)
    return out


def observed_information(tau, assay: MultiDilutionAssay) -> np.ndarray:
    """Negated Hessian of the joint log-likelihood (diagnostic alternative
    to the expected information)."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.zeros((tau.size, tau.size))
    for lv in assay.levels:
        out -= lv.u * lv.u * poisson.hessian(lv.u * tau, lv)
    return out


def level_params(assay: MultiDilutionAssay) -> list[tuple[float, int, float]]:
    """(u, M, q) design triples used by the expected-information formulas."""
    return [(lv.u, lv.M, lv.q_effective) for lv in assay.levels]


def _initial_theta(assay: MultiDilutionAssay) -> np.ndarray:
    """Pooled-count starting point: log(-log(1 - Y~/M~)) with clamping.

    Pools per-lineage counts and complete-data well counts across the levels;
    the inner log argument is kept away from 0 and 1 so lineages observed in
    every (or no) pooled well still start at a finite value.
    """
    pooled = assay.pooled_y()
    m_tilde = sum(lv.M_N + lv.m for lv in assay.levels)
    lo = 1.0 / (2.0 * m_tilde)
    inner = np.clip(1.0 - pooled / m_tilde, lo, 1.0 - lo)
    return np.log(-np.log(inner))


def fit_mle(assay: MultiDilutionAssay, opts: OptOptions | None = None, alpha: float = 0.05) -> FitResult:
    """Maximum-likelihood fit of the per-million rates for one assay.

    Regular assays are maximized over theta = log(tau) with BFGS; the two
    boundary outcomes short-circuit to 0 and +inf with degenerate intervals.
    An assay without any sequencing data (n = 0) reduces to the classic
    one-parameter dilution model for the total rate.
    """
    extreme = classify_extreme(assay)
    n = assay.n
    if extreme is ExtremeOutcome.ALL_NEGATIVE:
        return FitResult(
            tau_hat=np.zeros(n),
            iupm=0.0,
            covariance=np.zeros((n, n)),
            se_iupm=0.0,
            ci=(0.0, 0.0),
            alpha=alpha,
            log_lik=0.0,
            converged=True,
            iterations=0,
            extreme=extreme,
        )
    if extreme is ExtremeOutcome.ALL_POSITIVE_SINGLE_DVL:
        return FitResult(
            tau_hat=np.full(max(n, 1), math.inf),
            iupm=math.inf,
            covariance=np.full((max(n, 1),) * 2, math.nan),
            se_iupm=math.inf,
            ci=(math.inf, math.inf),
            alpha=alpha,
            log_lik=math.nan,
            converged=True,
            iterations=0,
            extreme=extreme,
        )
    if n == 0:
        return _fit_total_only(assay, opts, alpha)

    def objective(theta):
        return multi_log_likelihood(np.exp(theta), assay)

    def grad(theta):
        tau = np.exp(theta)
        return tau * multi_gradient(tau, assay)

    res = maximize(objective, grad, _initial_theta(assay), opts)
    theta, converged = _newton_polish(res.x, assay, (opts or OptOptions()).grad_tol)
    converged = converged or res.converged
    tau = np.exp(theta)
    info = fisher_information_multi(tau, level_params(assay))
    cov = covariance(info)
    se = math.sqrt(float(cov.sum()))
    iupm = float(tau.sum())
    return FitResult(
        tau_hat=tau,
        iupm=iupm,
        covariance=cov,
        se_iupm=se,
        ci=wald_ci(iupm, se, alpha),
        alpha=alpha,
        log_lik=multi_log_likelihood(tau, assay),
        converged=converged,
        iterations=res.iterations,
        extreme=ExtremeOutcome.REGULAR,
    )


def _newton_polish(theta: np.ndarray, assay: MultiDilutionAssay, tol: float, max_steps: int = 10):
    """Newton refinement in theta = log(tau) using the observed information.

    Line-search methods bottom out once objective differences fall below
    float noise, which can leave the gradient a little above a tight
    tolerance; with the analytic Hessian available the last stretch is a
    couple of Newton steps.
    """
    theta = theta.copy()

    def theta_grad(th):
        tau = np.exp(th)
        return tau * multi_gradient(tau, assay)

    g = theta_grad(theta)
    best = (theta.copy(), float(np.max(np.abs(g))))
    for _ in range(max_steps):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol:
            return theta, True
        tau = np.exp(theta)
        # d^2 l / d theta^2 = diag(tau) H diag(tau) + diag(theta-gradient)
        H = -observed_information(tau, assay)
        H = tau[:, None] * H * tau[None, :] + np.diag(g)
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        candidate = theta + step
        g_new = theta_grad(candidate)
        if not np.all(np.isfinite(g_new)) or float(np.max(np.abs(g_new))) >= gnorm:
            break
        theta, g = candidate, g_new
        if float(np.max(np.abs(g))) < best[1]:
            best = (theta.copy(), float(np.max(np.abs(g))))
    theta, gnorm = best
    return theta, gnorm <= tol


def _total_only_loglik(T: float, levels) -> float:
    total = 0.0
    for lv in levels:
        lam = lv.u * T
        if lv.M > lv.M_N:
            total += (lv.M - lv.M_N) * log1mexp(lam)
        total -= lv.M_N * lam
    return total


def _newton_polish_total(T: float, levels, tol: float, max_steps: int = 10):
    """Newton refinement of the one-parameter fit in phi = log(T)."""
    def dphi(T):
        dT = sum(lv.u * ((lv.M - lv.M_N) / math.expm1(lv.u * T) - lv.M_N) for lv in levels)
        return T * dT, dT

    g, dT = dphi(T)
    for _ in range(max_steps):
        if abs(g) <= tol:
            return T, True
        t = [math.expm1(lv.u * T) for lv in levels]
        d2T = -sum(
            lv.u * lv.u * (lv.M - lv.M_N) * (tk + 1.0) / (tk * tk)
            for lv, tk in zip(levels, t)
        )
        d2phi = T * T * d2T + g
        if d2phi >= 0:
            break
        T_new = T * math.exp(-g / d2phi)
        g_new, dT_new = dphi(T_new)
        if not math.isfinite(g_new) or abs(g_new) >= abs(g):
            break
        T, g, dT = T_new, g_new, dT_new
    return T, abs(g) <= tol


def _fit_total_only(assay: MultiDilutionAssay, opts, alpha: float) -> FitResult:
    """One-parameter fit of the total rate from well counts alone."""
    levels = assay.levels
    if len(levels) == 1:
        lv = levels[0]
        T = poisson.closed_form_no_udsa(lv.M, lv.M_N) / lv.u
        iterations, converged = 0, True
        log_lik = _total_only_loglik(T, levels)
    else:
        def objective(phi):
            return _total_only_loglik(float(np.exp(phi[0])), levels)

        def grad(phi):
            T = float(np.exp(phi[0]))
            g = sum(
                lv.u * ((lv.M - lv.M_N) / math.expm1(lv.u * T) - lv.M_N) for lv in levels
            )
            return np.array([T * g])

        seeds = [
            math.log(lv.M / lv.M_N) / lv.u for lv in levels if 0 < lv.M_N < lv.M
        ]
        T0 = float(np.mean(seeds)) if seeds else 0.5
        res = maximize(objective, grad, np.array([math.log(T0)]), opts)
        T = float(np.exp(res.x[0]))
        tol = (opts or OptOptions()).grad_tol
        T, polished = _newton_polish_total(T, levels, tol)
        iterations, converged = res.iterations, res.converged or polished
        log_lik = _total_only_loglik(T, levels)
    info = sum(lv.u * lv.u * lv.M / math.expm1(lv.u * T) for lv in levels)
    se = 1.0 / math.sqrt(info)
    return FitResult(
        tau_hat=np.array([T]),
        iupm=T,
        covariance=np.array([[1.0 / info]]),
        se_iupm=se,
        ci=wald_ci(T, se, alpha),
        alpha=alpha,
        log_lik=log_lik,
        converged=converged,
        iterations=iterations,
        extreme=ExtremeOutcome.REGULAR,
    )
