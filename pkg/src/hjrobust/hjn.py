"""Large-N HJN specification test.

The SDF coefficients are estimated by the four-pass procedure on a large
set of base portfolios; the pricing errors are then evaluated on a small
set of testing portfolios, and T times the weighted quadratic form is
compared against a weighted chi-square law with all n testing-portfolio
eigenweights retained (no projector deflation: the coefficient estimate
comes from an independent, larger cross-section).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import wchi2
from .classic import MC_FALLBACK_DRAWS, MC_FALLBACK_SEED
from .errors import AccuracyNotReached, DimensionMismatch, SingularTestingMoment
from .fourpass import DEFAULT_K_MAX, FourPassEstimate, four_pass
from .linalg import quad_form_inv
from .panels import FactorPanel, ReturnPanel, align, augment, select_assets

DEFAULT_TESTING_COUNT = 25


@dataclass(frozen=True)
class HjnConfig:
    """Asset selectors and four-pass settings for the HJN test.

    base/testing are column index sequences into the return panel; base
    defaults to every asset and testing to the first 25. Overlap between
    the two is allowed.
    """

    base: tuple[int, ...] | None = None
    testing: tuple[int, ...] | None = None
    alpha: float = 0.05
    k_max: int = DEFAULT_K_MAX
    phi: object = None
    k_override: int | None = None

    def resolve(self, n_assets: int) -> tuple[list[int], list[int]]:
        base = list(self.base) if self.base is not None else list(range(n_assets))
        testing = (list(self.testing) if self.testing is not None
                   else list(range(min(DEFAULT_TESTING_COUNT, n_assets))))
        if not testing:
            raise DimensionMismatch("testing selector is empty")
        if not base:
            raise DimensionMismatch("base selector is empty")
        if max(base + testing) >= n_assets or min(base + testing) < 0:
            raise DimensionMismatch("selector index out of range")
        return base, testing


@dataclass(frozen=True)
class HjnResult:
    statistic: float                 # T * quadratic form on testing assets
    weights: wchi2.WeightVector      # n testing-portfolio eigenweights
    p_value: float
    critical_value: float | None
    alpha: float
    reject: bool
    theta_tilde: np.ndarray
    k_hat: int
    estimate: FourPassEstimate = field(repr=False, default=None)
    warnings: tuple[str, ...] = ()


def hjn_test(r: ReturnPanel, g: FactorPanel, cfg: HjnConfig | None = None, *,
             want_critical: bool = True) -> HjnResult:
    """HJN specification test at level cfg.alpha."""
    cfg = cfg or HjnConfig()
    r, g = align(r, g)
    base_idx, test_idx = cfg.resolve(r.n_assets)
    n = len(test_idx)
    if r.t_len <= n:
        raise DimensionMismatch(f"need T > n, got T={r.t_len}, n={n}")
    warns = []
    if n / len(base_idx) > 0.5:
        warns.append("testing_share_large")

    base = select_assets(r, base_idx)
    fp = four_pass(base, g, k_max=cfg.k_max, phi=cfg.phi, k_override=cfg.k_override)
    theta = fp.theta_tilde

    G = augment(g)
    testing = select_assets(r, test_idx)
    rv = testing.values
    t = r.t_len
    q_test = rv.T @ G.values / t            # n x (K+1)
    q_r_test = rv.T @ rv / t                # n x n
    e_mean = 1.0 - q_test @ theta
    stat = t * quad_form_inv(q_r_test, e_mean, SingularTestingMoment,
                             "testing second moment")
    per = 1.0 - rv * (G.values @ theta)[:, None]
    s_test = per.T @ per / t
    weights = wchi2.sandwich_weights(s_test, q_r_test)
    if weights.n != n:
        warns.append("weight_count_mismatch")

    critical = None
    if weights.n == 0:
        reject = stat > 0.0
        return HjnResult(float(stat), weights, 1.0 if stat <= 0 else 0.0, 0.0,
                         cfg.alpha, bool(reject), theta, fp.k_hat, fp, tuple(warns))
    try:
        p_value = 1.0 - wchi2.cdf(weights, stat)
        if want_critical:
            critical = wchi2.quantile(weights, 1.0 - cfg.alpha)
    except AccuracyNotReached:
        sample = wchi2.mc_sample(weights, MC_FALLBACK_DRAWS, MC_FALLBACK_SEED)
        p_value = 1.0 - wchi2.cdf_mc(sample, stat)
        if want_critical:
            critical = float(np.quantile(sample, 1.0 - cfg.alpha))
        warns.append("mc_fallback")
    reject = stat > critical if critical is not None else p_value < cfg.alpha
    return HjnResult(float(stat), weights, float(p_value), critical, cfg.alpha,
                     bool(reject), theta, fp.k_hat, fp, tuple(warns))


def hjn_power_profile(cfg: HjnConfig, dgp, d_values, reps: int,
                      seed: int) -> np.ndarray:
    """Rejection frequency of the HJN test along a misspecification axis.

    dgp(d, seed_seq) must return an aligned (ReturnPanel, FactorPanel) pair;
    replication seeds are spawned from the master seed by (d index, rep), so
    the curve is deterministic given `seed`.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    freqs = np.zeros(len(d_values))
    for i, d in enumerate(d_values):
        hits = 0
        for rep in range(reps):
            ss = np.random.SeedSequence(seed, spawn_key=(i, rep))
            r, g = dgp(d, ss)
            res = hjn_test(r, g, cfg, want_critical=False)
            hits += int(res.reject)
        freqs[i] = hits / reps
    return freqs
