"""Non-robust baseline toolkit.

Closed-form SDF coefficient estimator, the HJ distance specification test
with weighted-chi-square critical values, the AR statistic, the J
(continuously-updated overidentification) test, the Fama-MacBeth two-pass
estimator, and characteristic-root-ratio diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize
from scipy.stats import chi2

from . import wchi2
from .errors import (
    AccuracyNotReached,
    DimensionMismatch,
    RankDeficientMoments,
    RankFailure,
    SingularErrorCovariance,
    SingularWeighting,
)
from .linalg import chol_lower, solve_pd, symmetrize
from .moments import MomentSet, as_theta, compute_moments, error_covariance, pricing_errors
from .panels import AugmentedFactors, FactorPanel, ReturnPanel, align, augment

MC_FALLBACK_DRAWS = 4_000_000
MC_FALLBACK_SEED = 202412
# squared per-asset tolerance for treating a mean pricing error as exactly zero
ZERO_ERROR_TOL_SQ = 1e-24


@dataclass(frozen=True)
class HjResult:
    """HJ specification test outcome."""

    theta_hat: np.ndarray
    delta_sq: float
    scaled_stat: float  # T * delta_sq
    weights: wchi2.WeightVector
    p_value: float
    critical_value: float | None
    alpha: float
    reject: bool
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class ArValue:
    statistic: float
    df: int


@dataclass(frozen=True)
class FmEstimate:
    beta_hat: np.ndarray    # N x K first-pass slopes
    lambda0_hat: float      # zero-beta return
    lambda_hat: np.ndarray  # K risk premia


@dataclass(frozen=True)
class JTestResult:
    statistic: float
    df: int
    p_value: float
    critical_value: float
    alpha: float
    reject: bool
    theta_min: np.ndarray
    n_singular: int
    refined: bool


def theta_hat(m: MomentSet) -> np.ndarray:
    """Closed-form GMM minimizer (q' Qr^-1 q)^-1 q' Qr^-1 iota."""
    th, _ = _theta_and_delta(m)
    return th


def hj_distance_sq(m: MomentSet) -> float:
    """Minimized HJ objective e(theta_hat)' Qr^-1 e(theta_hat)."""
    _, d2 = _theta_and_delta(m)
    return d2


def _theta_and_delta(m: MomentSet) -> tuple[np.ndarray, float]:
    n, p = m.q_gt.shape
    if n < p:
        raise RankDeficientMoments(f"need N >= K+1, got N={n}, K+1={p}")
    low = chol_lower(m.q_r, SingularWeighting, "returns second moment")
    b = sla.solve_triangular(low, m.q_gt, lower=True)
    a = sla.solve_triangular(low, np.ones(n), lower=True)
    qmat, rmat = np.linalg.qr(b)
    diag = np.abs(np.diag(rmat))
    if diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        raise RankDeficientMoments("q_gt is numerically rank deficient")
    proj = qmat.T @ a
    theta = sla.solve_triangular(rmat, proj, lower=False)
    resid = a - b @ theta
    return theta, float(resid @ resid)


def hj_closed_form_delta_sq(m: MomentSet) -> float:
    """The projector expression iota'(Qr^-1 - Qr^-1 q (q'Qr^-1 q)^-1 q'Qr^-1)iota.

    Deliberately computed on a different path from the plug-in minimizer so
    the two can cross-check each other numerically.
    """
    iota = np.ones(m.n_assets)
    z = solve_pd(m.q_r, iota, SingularWeighting, "returns second moment")
    w1 = solve_pd(m.q_r, m.q_gt, SingularWeighting, "returns second moment")
    gram = m.q_gt.T @ w1
    b = m.q_gt.T @ z
    return float(iota @ z - b @ np.linalg.solve(symmetrize(gram), b))


def theta_covariance(m: MomentSet, s: np.ndarray) -> np.ndarray:
    """Delta-method covariance of theta_hat: (D'WD)^-1 D'W S W D (D'WD)^-1 / T.

    D = q_gt, W = Qr^-1, S the pricing-error covariance at theta_hat.
    """
    z = solve_pd(m.q_r, m.q_gt, SingularWeighting, "returns second moment")
    gram = symmetrize(m.q_gt.T @ z)
    mid = symmetrize(z.T @ s @ z)
    inner = np.linalg.solve(gram, mid)
    cov = np.linalg.solve(gram, inner.T)
    return symmetrize(cov) / m.t_len


def hj_test(r: ReturnPanel, g: FactorPanel, alpha: float = 0.05, *,
            want_critical: bool = True) -> HjResult:
    """HJ specification test of the pricing moment conditions at level alpha.

    Critical values come from the weighted sum of chi-square(1) variables
    whose weights are the positive eigenvalues of the covariance sandwich
    with the q_gt projector removed (analytical count N-K-1). Quadrature
    failures fall back to a seeded Monte Carlo sample, flagged in warnings.
    """
    r, g = align(r, g)
    G = augment(g)
    m = compute_moments(r, G)
    n, k = m.n_assets, m.k_factors
    if not (m.t_len > n > k + 1):
        raise DimensionMismatch(f"need T > N > K+1, got T={m.t_len}, N={n}, K={k}")
    theta, delta_sq = _theta_and_delta(m)
    per = pricing_errors(r, G, theta).per_period
    s = error_covariance(per)
    weights = wchi2.sandwich_weights(s, m.q_r, m.q_gt)
    warns = []
    if weights.n != n - k - 1:
        warns.append("weight_count_mismatch")
    scaled = m.t_len * delta_sq

    critical = None
    if weights.n == 0:
        # degenerate exact-pricing data: point mass at zero
        reject = scaled > 0.0
        return HjResult(theta, delta_sq, scaled, weights, 1.0 if scaled <= 0 else 0.0,
                        0.0, alpha, bool(reject), tuple(warns))
    try:
        p_value = 1.0 - wchi2.cdf(weights, scaled)
        if want_critical:
            critical = wchi2.quantile(weights, 1.0 - alpha)
    except AccuracyNotReached:
        sample = wchi2.mc_sample(weights, MC_FALLBACK_DRAWS, MC_FALLBACK_SEED)
        p_value = 1.0 - wchi2.cdf_mc(sample, scaled)
        if want_critical:
            critical = float(np.quantile(sample, 1.0 - alpha))
        warns.append("mc_fallback")
    reject = scaled > critical if critical is not None else p_value < alpha
    return HjResult(theta, delta_sq, scaled, weights, p_value, critical,
                    alpha, bool(reject), tuple(warns))


# --- AR statistic ------------------------------------------------------------

def ar_stat(r: ReturnPanel, g: FactorPanel, theta) -> ArValue:
    """AR(theta) = T e_T(theta)' S_T(theta)^-1 e_T(theta), compared to chi2(N)."""
    r, g = align(r, g)
    G = augment(g)
    pe = pricing_errors(r, G, theta)
    s = error_covariance(pe.per_period)
    low = chol_lower(s, SingularErrorCovariance, "pricing-error covariance")
    y = sla.solve_triangular(low, pe.mean_error, lower=True)
    return ArValue(float(r.t_len * (y @ y)), r.n_assets)


class ArEvaluator:
    """Batched AR(theta) evaluation over many candidate coefficient vectors.

    Grid points where S_T(theta) is numerically singular get AR = +inf and
    are counted rather than raising; far-out candidates can legitimately
    produce degenerate error covariances.
    """

    def __init__(self, r: ReturnPanel, G: AugmentedFactors):
        self.rv = r.values
        self.gv = G.values
        self.t_len = r.t_len
        self.n_assets = r.n_assets

    def ar_one(self, theta) -> float:
        theta = as_theta(theta, self.gv.shape[1])
        sdf = self.gv @ theta
        e = 1.0 - self.rv * sdf[:, None]
        mean = e.mean(axis=0)
        if float(mean @ mean) <= ZERO_ERROR_TOL_SQ * self.n_assets:
            return 0.0  # exact pricing: zero error regardless of S rank
        s = e.T @ e / self.t_len
        try:
            low = np.linalg.cholesky(symmetrize(s))
        except np.linalg.LinAlgError:
            return np.inf
        y = sla.solve_triangular(low, mean, lower=True)
        return float(self.t_len * (y @ y))

    @staticmethod
    def _pd_mask(s: np.ndarray) -> np.ndarray:
        """Boolean mask of numerically-PD matrices in a stack (Cholesky-based)."""
        try:
            low = np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            vals = np.linalg.eigvalsh(s)
            return vals[:, 0] > 1e-12 * np.maximum(vals[:, -1], 1e-300)
        d = np.diagonal(low, axis1=1, axis2=2) ** 2
        return d.min(axis=1) > 1e-12 * np.maximum(d.max(axis=1), 1e-300)

    def ar_many(self, thetas: np.ndarray, keep_s: bool = False, block: int = 512):
        """Returns (ar values, mean errors P x N, covariances or None)."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        p_total = thetas.shape[0]
        t, n = self.rv.shape
        ar = np.full(p_total, np.inf)
        means = np.empty((p_total, n))
        covs = np.empty((p_total, n, n)) if keep_s else None
        for lo in range(0, p_total, block):
            hi = min(lo + block, p_total)
            sdf = self.gv @ thetas[lo:hi].T                    # (T, b)
            e = 1.0 - self.rv[:, :, None] * sdf[:, None, :]    # (T, N, b)
            mean = e.mean(axis=0)                              # (N, b)
            s = np.einsum("tnp,tmp->pnm", e, e) / t            # (b, N, N)
            means[lo:hi] = mean.T
            if keep_s:
                covs[lo:hi] = s
            ok = self._pd_mask(s)
            if np.any(ok):
                sol = np.linalg.solve(s[ok], mean.T[ok][:, :, None])[:, :, 0]
                ar[lo:hi][ok] = self.t_len * np.einsum("pn,pn->p", mean.T[ok], sol)
            zero = np.einsum("np,np->p", mean, mean) <= ZERO_ERROR_TOL_SQ * n
            ar[lo:hi][zero] = 0.0
        return ar, means, covs


def j_test(r: ReturnPanel, g: FactorPanel, theta_grid, alpha: float = 0.05, *,
           df_mode: str = "n_minus_k", refine: bool = True) -> JTestResult:
    """J = inf over theta of AR(theta), compared against a chi-square quantile.

    The infimum is taken over the supplied grid and then polished with a
    Nelder-Mead local search from the best grid point (tolerance 1e-8 on the
    AR value). df_mode selects chi2(N-K) (default) or chi2(N-K-1).
    """
    points = np.atleast_2d(np.asarray(getattr(theta_grid, "points", theta_grid), dtype=float))
    if points.size == 0:
        raise ValueError("theta grid is empty")
    r, g = align(r, g)
    G = augment(g)
    ev = ArEvaluator(r, G)
    ar, _, _ = ev.ar_many(points)
    n_singular = int(np.sum(np.isinf(ar)))
    if n_singular == ar.size:
        raise SingularErrorCovariance("S_T(theta) singular at every grid point")
    best = int(np.argmin(ar))
    j_val = float(ar[best])
    theta_best = points[best]
    refined = False
    if refine:
        res = minimize(ev.ar_one, theta_best, method="Nelder-Mead",
                       options={"fatol": 1e-8, "xatol": 1e-10, "maxiter": 2000})
        if np.isfinite(res.fun) and res.fun < j_val:
            j_val = float(res.fun)
            theta_best = np.asarray(res.x, dtype=float)
            refined = True
    n, k = r.n_assets, g.k_factors
    if df_mode == "n_minus_k":
        df = n - k
    elif df_mode == "n_minus_k_minus_1":
        df = n - k - 1
    else:
        raise ValueError(f"unknown df_mode {df_mode!r}")
    if df < 1:
        raise DimensionMismatch("J test needs N > K")
    p_value = float(1.0 - chi2.cdf(j_val, df))
    critical = float(chi2.ppf(1.0 - alpha, df))
    return JTestResult(j_val, df, p_value, critical, alpha, j_val > critical,
                       theta_best, n_singular, refined)


# --- Fama-MacBeth ------------------------------------------------------------

def fm_two_pass(r: ReturnPanel, g: FactorPanel) -> FmEstimate:
    """Time-series betas, then cross-sectional regression of mean returns.

    First pass regresses each asset on (1, demeaned factors); second pass
    regresses average returns on (iota, beta_hat).
    """
    r, g = align(r, g)
    G = augment(g)
    k = g.k_factors
    if r.t_len <= k + 1:
        raise RankFailure("first pass needs T > K+1")
    if r.n_assets <= k + 1:
        raise RankFailure("second pass needs N > K+1")
    x = G.values
    coef, _, rank, _ = np.linalg.lstsq(x, r.values, rcond=None)
    if rank < k + 1:
        raise RankFailure("first-pass design is rank deficient")
    beta = coef[1:].T  # N x K
    z = np.column_stack([np.ones(r.n_assets), beta])
    if np.linalg.matrix_rank(z, tol=1e-10 * max(1.0, np.abs(z).max())) < k + 1:
        raise RankFailure("second-pass design [iota, beta_hat] is rank deficient")
    gamma, _, _, _ = np.linalg.lstsq(z, r.values.mean(axis=0), rcond=None)
    return FmEstimate(beta, float(gamma[0]), gamma[1:])


def crr(r: ReturnPanel, top_m: int = 4) -> np.ndarray:
    """Top characteristic-root ratios of the centered return covariance.

    Entry i is the share of total return variation carried by the i-th
    principal component, descending.
    """
    if top_m < 1:
        raise ValueError("top_m must be >= 1")
    cov = np.cov(r.values, rowvar=False)
    cov = np.atleast_2d(cov)
    vals = np.linalg.eigvalsh(symmetrize(cov))[::-1]
    vals = np.clip(vals, 0.0, None)
    total = vals.sum()
    if total <= 0:
        return np.zeros(min(top_m, vals.size))
    return vals[: min(top_m, vals.size)] / total
