"""Four-pass SDF coefficient estimator for large cross-sections.

Pass 1 regresses returns on the observed factors; pass 2 selects the number
of residual factors by a penalized eigenvalue criterion and extracts their
common component by principal components on the T x T residual Gram matrix;
pass 3 removes the common component from the split-sample moment blocks;
pass 4 instruments each cleaned block with the other and averages the two
IV estimates. A plug-in covariance for the averaged estimate and the risk
premia transform are included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    RankFailure,
    WeakInstrumentSingularity,
    ZeroConstantCoefficient,
)
from .linalg import symmetrize
from .moments import as_theta
from .panels import AugmentedFactors, FactorPanel, ReturnPanel, align, augment

DEFAULT_K_MAX = 10
IV_CONDITION_LIMIT = 1e12


def default_penalty(n: int, t: int) -> float:
    """Penalty per extra factor: N^(-1/4) + T^(-1/4)."""
    return n ** -0.25 + t ** -0.25


@dataclass(frozen=True)
class FactorCountEstimate:
    k_hat: int
    objective_curve: np.ndarray  # value at j = 1 .. k_max+1
    penalty_value: float


@dataclass(frozen=True)
class CommonComponents:
    x_hat: np.ndarray  # T x k, normalized x'x/T = I
    b_hat: np.ndarray  # k x N loadings
    cc: np.ndarray     # T x N common component x_hat @ b_hat


@dataclass(frozen=True)
class FourPassEstimate:
    theta_tilde: np.ndarray      # averaged estimate
    theta_sub: np.ndarray        # (2, K+1) subsample IV estimates
    k_hat: int
    q_clean_1: np.ndarray        # N x (K+1) cleaned first-half moments
    q_clean_2: np.ndarray
    factor_count: FactorCountEstimate | None
    sigma_theta: np.ndarray | None = None


@dataclass(frozen=True)
class RiskPremia:
    lambda_tilde: np.ndarray
    v_g: np.ndarray


def ols_residuals(r: ReturnPanel, G: AugmentedFactors) -> np.ndarray:
    """T x N residuals of the time-series regression of returns on (1, factors)."""
    if r.t_len != G.t_len:
        raise DimensionMismatch("aligned panels required")
    k1 = G.values.shape[1]
    if r.t_len <= k1:
        raise RankFailure("need T > K+1 for the time-series regression")
    coef, _, rank, _ = np.linalg.lstsq(G.values, r.values, rcond=None)
    if rank < k1:
        raise RankFailure("factor design is rank deficient")
    return r.values - G.values @ coef


def estimate_factor_count(u_hat: np.ndarray, k_max: int = DEFAULT_K_MAX,
                          phi=None) -> FactorCountEstimate:
    """Penalized eigenvalue criterion on the residual Gram matrix.

    Minimizes lambda_j(u u') / (N T) + j * phi(N, T) over j = 1 .. k_max+1
    and returns argmin - 1, so zero factors is an admissible answer. Ties go
    to fewer factors. Note the eigenvalue term scales with the squared data
    while the penalty does not, so the selected count is intentionally not
    scale invariant.
    """
    u = np.asarray(u_hat, dtype=float)
    t, n = u.shape
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if k_max + 1 > t:
        raise DimensionMismatch("k_max+1 exceeds the number of periods")
    pen = default_penalty(n, t) if phi is None else float(phi(n, t))
    if pen <= 0:
        raise ValueError("penalty must be positive")
    gram = u @ u.T
    vals = np.linalg.eigvalsh(symmetrize(gram))[::-1]
    vals = np.clip(vals[: k_max + 1], 0.0, None)
    js = np.arange(1, k_max + 2)
    curve = vals / (n * t) + js * pen
    k_hat = int(np.argmin(curve))  # argmin - 1 with 1-based j
    return FactorCountEstimate(k_hat, curve, pen)


def extract_common(u_hat: np.ndarray, k: int) -> CommonComponents:
    """Principal-components common component of the residual matrix.

    x_hat is sqrt(T) times the top-k eigenvectors of u u' (T x T problem by
    construction, whatever the N/T ratio); each column's sign is fixed so
    its largest-magnitude entry is positive. b_hat = x_hat' u / T.
    """
    u = np.asarray(u_hat, dtype=float)
    t, n = u.shape
    if not 0 <= k <= min(n, t):
        raise ValueError(f"k must lie in [0, min(N,T)], got {k}")
    if k == 0:
        return CommonComponents(np.zeros((t, 0)), np.zeros((0, n)), np.zeros((t, n)))
    gram = symmetrize(u @ u.T)
    vals, vecs = np.linalg.eigh(gram)
    top = vecs[:, ::-1][:, :k]
    flip = np.sign(top[np.argmax(np.abs(top), axis=0), np.arange(k)])
    flip[flip == 0] = 1.0
    x_hat = np.sqrt(t) * top * flip
    b_hat = x_hat.T @ u / t
    return CommonComponents(x_hat, b_hat, x_hat @ b_hat)


def split_and_clean(r: ReturnPanel, G: AugmentedFactors,
                    cc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Subsample moment blocks with the common component removed.

    The first subsample holds periods 1..floor(T/2), the second the rest.
    Each cleaned block is (1/T_i) sum_t (r_t - cc_t) G_t', shaped N x (K+1).
    """
    t = r.t_len
    if t < 4:
        raise DimensionMismatch("need T >= 4 to split the sample")
    cc = np.asarray(cc, dtype=float)
    if cc.shape != r.values.shape:
        raise DimensionMismatch("common component must be T x N")
    half = t // 2
    out = []
    for sl in (slice(0, half), slice(half, t)):
        rv, gv, cv = r.values[sl], G.values[sl], cc[sl]
        t_i = rv.shape[0]
        q = rv.T @ gv / t_i
        q_cc = cv.T @ gv / t_i
        out.append(q - q_cc)
    return out[0], out[1]


def _iv_one(q_own: np.ndarray, q_inst: np.ndarray) -> np.ndarray:
    qmat, rmat = np.linalg.qr(q_inst)
    diag = np.abs(np.diag(rmat))
    if diag.size == 0 or diag.min() <= 1e-13 * max(diag.max(), 1e-300):
        raise WeakInstrumentSingularity("instrument block is rank deficient")
    bq = qmat.T @ q_own           # projected regressors, (K+1) x (K+1)
    bi = qmat.T @ np.ones(q_own.shape[0])
    gram = bq.T @ bq
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > IV_CONDITION_LIMIT:
        raise WeakInstrumentSingularity(
            f"projected cross-product condition number {cond:.3e} exceeds limit",
            condition_number=float(cond))
    return np.linalg.solve(gram, bq.T @ bi)


def iv_theta(q_clean_1: np.ndarray, q_clean_2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cross-instrumented IV estimates and their average.

    theta^(1) regresses iota on the first cleaned block using the second as
    instrument (projection-IV form), theta^(2) swaps the roles; the returned
    estimate is their average.
    """
    q1 = np.asarray(q_clean_1, dtype=float)
    q2 = np.asarray(q_clean_2, dtype=float)
    if q1.shape != q2.shape:
        raise DimensionMismatch("cleaned moment blocks must share a shape")
    th1 = _iv_one(q1, q2)
    th2 = _iv_one(q2, q1)
    theta_sub = np.stack([th1, th2])
    return theta_sub.mean(axis=0), theta_sub


def four_pass(r: ReturnPanel, g: FactorPanel, *, k_max: int = DEFAULT_K_MAX,
              phi=None, k_override: int | None = None) -> FourPassEstimate:
    """Full pipeline: OLS residuals, factor count, PCA cleaning, split IV."""
    r, g = align(r, g)
    G = augment(g)
    u = ols_residuals(r, G)
    fc = None
    if k_override is None:
        fc = estimate_factor_count(u, k_max=k_max, phi=phi)
        k = fc.k_hat
    else:
        k = int(k_override)
    comp = extract_common(u, k)
    q1, q2 = split_and_clean(r, G, comp.cc)
    theta, theta_sub = iv_theta(q1, q2)
    return FourPassEstimate(theta, theta_sub, k, q1, q2, fc)


def risk_premia(theta, v_g: np.ndarray) -> RiskPremia:
    """Premia transform -V_g theta_factors / theta_const.

    v_g is the K x K second-moment matrix of the demeaned factors used when
    estimating theta.
    """
    v_g = np.atleast_2d(np.asarray(v_g, dtype=float))
    theta = as_theta(theta, v_g.shape[0] + 1)
    if abs(theta[0]) <= 1e-12:
        raise ZeroConstantCoefficient("constant SDF coefficient is numerically zero")
    return RiskPremia(-v_g @ theta[1:] / theta[0], v_g)


def sigma_theta(fp: FourPassEstimate, theta_var_supplement: np.ndarray | None = None,
                t_len: int | None = None) -> tuple[np.ndarray, tuple[str, ...]]:
    """Plug-in covariance of the averaged IV estimate.

    Each subsample contributes a sandwich of per-asset IV residual terms
    with the projected cross-product gram on both sides; all three pieces
    are normalized as per-asset averages so the combined (1/2N)-weighted
    sum estimates the variance of the averaged coefficient vector. When the
    caller supplies a consistent estimate for the variance of the average
    itself, it is added scaled by 1/T; otherwise that term is omitted and
    flagged.
    """
    n = fp.q_clean_1.shape[0]
    pieces = []
    for q_own, q_inst, th in ((fp.q_clean_1, fp.q_clean_2, fp.theta_sub[0]),
                              (fp.q_clean_2, fp.q_clean_1, fp.theta_sub[1])):
        qmat, _ = np.linalg.qr(q_inst)
        proj_rows = q_own.T @ qmat @ qmat.T          # q' P, (K+1) x N
        gram = proj_rows @ q_own / n
        resid = np.ones(n) - q_own @ th
        mid = (proj_rows * resid[None, :] ** 2) @ proj_rows.T / n
        ginv_mid = np.linalg.solve(gram, mid)
        pieces.append(np.linalg.solve(gram, ginv_mid.T).T)
    sigma = symmetrize((pieces[0] + pieces[1]) / (2.0 * n))
    warns = []
    if theta_var_supplement is not None:
        if t_len is None:
            raise ValueError("t_len is required with a theta-variance supplement")
        sigma = symmetrize(sigma + np.asarray(theta_var_supplement, dtype=float) / t_len)
    else:
        warns.append("theta_var_term_omitted")
    return sigma, tuple(warns)
