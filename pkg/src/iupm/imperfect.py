"""Likelihood and constrained MLE under imperfect assay sensitivity/specificity.

Per-well observed-data likelihood: sequenced wells contribute the joint
probability of their (QVOA, UDSA) readings, unsequenced wells the marginal
QVOA probability.  The joint probability marginalizes the 2^n latent
infection patterns, but because the true QVOA status is 1 unless every
lineage is absent, the sum collapses to products:

    S  = prod_i [ P(z*_i | 0) e^{-lam_i} + P(z*_i | 1) (1 - e^{-lam_i}) ]
    T0 = prod_i   P(z*_i | 0) e^{-lam_i}
    P(w*, z*) = P(w* | W=1) (S - T0) + P(w* | W=0) T0,

which is what keeps evaluation O(M n) rather than O(M 2^n).  Rate MLEs are
no longer guaranteed positive here, so the fit runs the bounded quasi-Newton
over tau >= 0 directly on the rate scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assay import AssayDataError, ErrorRates, WellAssay, summarize_well_assay
from .inference import FitResult, SingularInformationError, covariance, wald_ci
from .optimize import OptOptions, fd_newton_polish, maximize_box
from .poisson import ExtremeOutcome

__all__ = [
    "ImperfectModel",
    "ImperfectFitError",
    "well_joint_prob",
    "well_marginal_prob",
    "imperfect_log_likelihood",
    "imperfect_gradient",
    "fit_imperfect",
]


class ImperfectFitError(RuntimeError):
    """Raised when the bounded fit cannot produce a usable estimate."""


@dataclass(frozen=True)
class ImperfectModel:
    """Error rates plus per-well data, one WellAssay per dilution level."""

    rates: ErrorRates
    assays: tuple[WellAssay, ...]

    def __post_init__(self):
        object.__setattr__(self, "assays", tuple(self.assays))
        if not self.assays:
            raise AssayDataError("the imperfect model needs at least one dilution level")
        n = self.assays[0].n
        if any(wa.n != n for wa in self.assays):
            raise AssayDataError("all levels must share the same lineage columns")
        us = [wa.u for wa in self.assays]
        if len(set(us)) != len(us):
            raise AssayDataError("dilution levels u must be distinct")

    @property
    def n(self) -> int:
        return self.assays[0].n


class _Tables:
    """Per-level arrays extracted once from the WellRecord list."""

    def __init__(self, wa: WellAssay):
        seq = [(j, rec) for j, rec in enumerate(wa.wells) if rec.r == 1]
        self.seq_idx = np.array([j for j, _ in seq], dtype=int)
        self.z = (
            np.array([rec.z_star for _, rec in seq], dtype=float)
            if seq
            else np.zeros((0, wa.n))
        )
        self.w_seq = np.array([rec.w_star for _, rec in seq], dtype=float)
        unseq = [rec for rec in wa.wells if rec.r == 0]
        self.n_unseq_pos = sum(1 for rec in unseq if rec.w_star == 1)
        self.n_unseq_neg = len(unseq) - self.n_unseq_pos
        self.n = wa.n


def _leave_one_out_prod(a: np.ndarray) -> np.ndarray:
    """Row-wise products of all columns except each one (exact at zeros)."""
    m, n = a.shape
    prefix = np.ones((m, n))
    suffix = np.ones((m, n))
    if n > 1:
        prefix[:, 1:] = np.cumprod(a[:, :-1], axis=1)
        suffix[:, :-1] = np.cumprod(a[:, ::-1][:, :-1], axis=1)[:, ::-1]
    return prefix * suffix


def _seq_probs(lam: np.ndarray, tables: _Tables, rates: ErrorRates):
    e = np.exp(-lam)
    pz1 = np.where(tables.z == 1.0, rates.sens_udsa, 1.0 - rates.sens_udsa)
    pz0 = np.where(tables.z == 1.0, 1.0 - rates.spec_udsa, rates.spec_udsa)
    s = pz0 * e + pz1 * (1.0 - e)
    t0 = pz0 * e
    S = s.prod(axis=1)
    T0 = t0.prod(axis=1)
    pw1 = np.where(tables.w_seq == 1.0, rates.sens_qvoa, 1.0 - rates.sens_qvoa)
    pw0 = np.where(tables.w_seq == 1.0, 1.0 - rates.spec_qvoa, rates.spec_qvoa)
    P = pw1 * (S - T0) + pw0 * T0
    return e, pz1, pz0, s, S, T0, pw1, pw0, P


def _marginals(lam_total: float, rates: ErrorRates) -> tuple[float, float]:
    eL = math.exp(-lam_total)
    pos = rates.sens_qvoa * (1.0 - eL) + (1.0 - rates.spec_qvoa) * eL
    neg = (1.0 - rates.sens_qvoa) * (1.0 - eL) + rates.spec_qvoa * eL
    return pos, neg


def well_joint_prob(lam, w_star: int, z_star, rates: ErrorRates) -> float:
    """P(W* = w_star, Z* = z_star) for one sequenced well."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    z = np.atleast_1d(np.asarray(z_star, dtype=float))
    if z.shape != lam.shape:
        raise ValueError("z_star must have one entry per lineage")
    e = np.exp(-lam)
    pz1 = np.where(z == 1.0, rates.sens_udsa, 1.0 - rates.sens_udsa)
    pz0 = np.where(z == 1.0, 1.0 - rates.spec_udsa, rates.spec_udsa)
    S = float(np.prod(pz0 * e + pz1 * (1.0 - e)))
    T0 = float(np.prod(pz0 * e))
    pw1 = rates.sens_qvoa if w_star == 1 else 1.0 - rates.sens_qvoa
    pw0 = 1.0 - rates.spec_qvoa if w_star == 1 else rates.spec_qvoa
    return pw1 * (S - T0) + pw0 * T0


def well_marginal_prob(lam, w_star: int, rates: ErrorRates) -> float:
    """P(W* = w_star) for an unsequenced well; depends on the rates only
    through their total."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    pos, neg = _marginals(float(lam.sum()), rates)
    return pos if w_star == 1 else neg


def _level_loglik(lam: np.ndarray, tables: _Tables, rates: ErrorRates, strict: bool) -> float:
    *_, P = _seq_probs(lam, tables, rates)
    if np.any(P <= 0.0):
        if strict:
            bad = int(tables.seq_idx[int(np.argmax(P <= 0.0))])
            raise ImperfectFitError(
                f"well {bad} has probability zero under the supplied error rates"
            )
        return -math.inf
    total = float(np.log(P).sum())
    pos, neg = _marginals(float(lam.sum()), rates)
    for count, prob in ((tables.n_unseq_pos, pos), (tables.n_unseq_neg, neg)):
        if count:
            if prob <= 0.0:
                if strict:
                    raise ImperfectFitError(
                        "an unsequenced well has probability zero under the supplied error rates"
                    )
                return -math.inf
            total += count * math.log(prob)
    return total


def _level_gradient(lam: np.ndarray, tables: _Tables, rates: ErrorRates) -> np.ndarray:
    e, pz1, pz0, s, S, T0, pw1, pw0, P = _seq_probs(lam, tables, rates)
    grad = np.zeros(tables.n)
    if tables.z.shape[0]:
        dS = _leave_one_out_prod(s) * (e * (pz1 - pz0))
        dP = pw1[:, None] * (dS + T0[:, None]) - pw0[:, None] * T0[:, None]
        grad += (dP / P[:, None]).sum(axis=0)
    lam_total = float(lam.sum())
    pos, neg = _marginals(lam_total, rates)
    gain = (rates.sens_qvoa + rates.spec_qvoa - 1.0) * math.exp(-lam_total)
    if tables.n_unseq_pos:
        grad += tables.n_unseq_pos * gain / pos
    if tables.n_unseq_neg:
        grad -= tables.n_unseq_neg * gain / neg
    return grad


def imperfect_log_likelihood(lam, wa: WellAssay, rates: ErrorRates) -> float:
    """Observed-data log-likelihood of one level's per-well readings.

    A data/rate combination that is impossible under the model (some well
    with probability exactly zero) raises, naming the well.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.size != wa.n:
        raise ValueError(f"rate vector has length {lam.size}, assay has n={wa.n}")
    return _level_loglik(lam, _Tables(wa), rates, strict=True)


def imperfect_gradient(lam, wa: WellAssay, rates: ErrorRates) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.size != wa.n:
        raise ValueError(f"rate vector has length {lam.size}, assay has n={wa.n}")
    return _level_gradient(lam, _Tables(wa), rates)


def _observed_information(tau: np.ndarray, free: np.ndarray, grad_full, h_rel: float = 1e-5) -> np.ndarray:
    """Numerical observed information on the free coordinates via central
    differences of the analytic gradient."""
    idx = np.flatnonzero(free)
    k = idx.size
    H = np.zeros((k, k))
    for col, i in enumerate(idx):
        h = max(h_rel * tau[i], 1e-8)
        if tau[i] - h < 0:
            h = tau[i] / 2.0
        hi = tau.copy()
        hi[i] += h
        lo = tau.copy()
        lo[i] -= h
        H[:, col] = (grad_full(hi)[idx] - grad_full(lo)[idx]) / (2.0 * h)
    H = (H + H.T) / 2.0
    return -H


def fit_imperfect(model: ImperfectModel, opts: OptOptions | None = None, alpha: float = 0.05) -> FitResult:
    """Bounded MLE of the per-million rates from per-well data.

    Standard errors use the numerical observed information at the optimum;
    when some components sit at zero the information is computed on the free
    coordinates only and the interval is boundary-flagged via
    ``active_lower``.
    """
    model.rates.check_identifiable()
    tables = [(wa.u, _Tables(wa)) for wa in model.assays]
    n = model.n
    if n == 0:
        raise AssayDataError("the imperfect fit needs at least one lineage column")

    def objective(tau):
        return sum(_level_loglik(u * tau, tb, model.rates, strict=False) for u, tb in tables)

    def grad(tau):
        out = np.zeros(n)
        for u, tb in tables:
            out += u * _level_gradient(u * tau, tb, model.rates)
        return out

    tau0 = _initial_tau(model)
    res = maximize_box(objective, grad, tau0, np.zeros(n), opts)
    tau, polished = fd_newton_polish(grad, res.x, np.zeros(n), (opts or OptOptions()).grad_tol)
    if objective(tau) >= res.f - 1e-9 * (abs(res.f) + 1.0):
        converged = res.converged or polished
    else:
        tau, converged = res.x, res.converged
    free = tau > 0.0
    if not free.any():
        raise ImperfectFitError("all rate components ended on the zero boundary")
    info = _observed_information(tau, free, grad)
    try:
        cov_free = covariance(info)
    except SingularInformationError:
        raise ImperfectFitError(
            "observed information is singular at the optimum"
        ) from None
    cov = np.zeros((n, n))
    cov[np.ix_(free, free)] = cov_free
    se = math.sqrt(float(cov_free.sum()))
    iupm = float(tau.sum())
    return FitResult(
        tau_hat=tau,
        iupm=iupm,
        covariance=cov,
        se_iupm=se,
        ci=wald_ci(iupm, se, alpha),
        alpha=alpha,
        log_lik=objective(tau),
        converged=converged,
        iterations=res.iterations,
        extreme=ExtremeOutcome.REGULAR,
        active_lower=tuple(int(i) for i in np.flatnonzero(~free)),
    )


def _initial_tau(model: ImperfectModel) -> np.ndarray:
    """Pooled naive-count start, floored away from the boundary."""
    n = model.n
    pooled = np.zeros(n)
    complete = 0
    for wa in model.assays:
        summary = summarize_well_assay(wa)
        pooled += summary.y_array()
        complete += summary.M_N + summary.m
    u_mean = float(np.mean([wa.u for wa in model.assays]))
    lo = 1.0 / (2.0 * max(complete, 1))
    inner = np.clip(1.0 - pooled / max(complete, 1), lo, 1.0 - lo)
    return np.maximum(-np.log(inner) / u_mean, 1e-3)
