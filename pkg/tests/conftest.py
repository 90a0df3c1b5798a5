"""Shared fixtures and panel-building helpers."""

import numpy as np
import pytest

from hjrobust.panels import FactorPanel, ReturnPanel


def periods(t):
    return [f"{i:06d}" for i in range(t)]


def return_panel(values, names=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    t, n = values.shape
    return ReturnPanel(periods(t), values, names or [f"a{i}" for i in range(n)])


def factor_panel(values, names=None):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    t, k = values.shape
    return FactorPanel(periods(t), values, names or [f"g{i}" for i in range(k)])


def random_panels(seed, t=60, n=6, k=2, noise=0.05):
    """Generic factor-structure panels for smoke/oracle tests."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((t, k))
    beta = rng.uniform(0.2, 1.0, (n, k)) * 0.02
    lam = rng.uniform(0.2, 0.6, k)
    r = 1.0 + beta @ lam + g @ beta.T + rng.standard_normal((t, n)) * noise
    return return_panel(r), factor_panel(g)


def exact_pricing_panels(seed=0, t=40, n=5, k=1):
    """Panels where the mean pricing error vanishes exactly at theta = (1, 0...).

    Returns are built with sample mean exactly one per asset, so
    iota - q_gt theta = iota - rbar = 0 and the minimized HJ distance is 0.
    """
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((t, k)) * 0.1
    g = g - g.mean(axis=0)
    noise = rng.standard_normal((t, n)) * 0.05
    noise -= noise.mean(axis=0)
    r = 1.0 + noise
    theta = np.concatenate(([1.0], np.zeros(k)))
    return return_panel(r), factor_panel(g), theta


@pytest.fixture
def rng():
    return np.random.default_rng(20240809)
