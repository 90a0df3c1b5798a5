import numpy as np
import pytest

from hjrobust.errors import DimensionMismatch
from hjrobust.moments import (compute_moments, error_covariance,
                              mean_pricing_error, pricing_errors)
from hjrobust.panels import augment

from conftest import factor_panel, random_panels, return_panel


class TestComputeMoments:
    def test_hand_case_t2(self):
        r = return_panel([[1.0], [1.0]])
        g = factor_panel([1.0, 3.0])  # demeans to [-1, 1]
        m = compute_moments(r, augment(g))
        assert np.allclose(m.q_r, [[1.0]])
        assert np.allclose(m.q_gt, [[1.0, 0.0]])

    def test_constant_returns(self):
        c = np.array([1.1, 0.9, 1.3])
        r = return_panel(np.tile(c, (4, 1)))
        g = factor_panel([0.1, -0.1, 0.2, -0.2])
        m = compute_moments(r, augment(g))
        assert np.allclose(m.q_gt[:, 0], c)
        assert np.allclose(m.q_r, np.outer(c, c))

    def test_loop_oracle(self, rng):
        r, g = random_panels(1, t=5, n=3, k=2)
        G = augment(g)
        m = compute_moments(r, G)
        # independent per-period loop summation
        q = np.zeros((3, 3))
        qr = np.zeros((3, 3))
        for t in range(5):
            q += np.outer(r.values[t], G.values[t]) / 5
            qr += np.outer(r.values[t], r.values[t]) / 5
        assert np.allclose(m.q_gt, q, atol=1e-12)
        assert np.allclose(m.q_r, qr, atol=1e-12)

    def test_first_column_is_mean_return(self):
        r, g = random_panels(2)
        m = compute_moments(r, augment(g))
        assert np.allclose(m.q_gt[:, 0], r.values.mean(axis=0), atol=1e-14)

    def test_dimension_mismatch(self):
        r, _ = random_panels(3, t=30)
        _, g = random_panels(4, t=40)
        with pytest.raises(DimensionMismatch):
            compute_moments(r, augment(g))


class TestPricingErrors:
    def test_zero_theta_gives_ones(self):
        r, g = random_panels(5, n=4, k=1)
        pe = pricing_errors(r, augment(g), [0.0, 0.0])
        assert np.allclose(pe.mean_error, 1.0)
        assert np.allclose(pe.per_period, 1.0)

    def test_exactly_identified_zero_error(self):
        r, g = random_panels(6, t=50, n=2, k=1)  # N = K+1
        G = augment(g)
        m = compute_moments(r, G)
        theta = np.linalg.solve(m.q_gt, np.ones(2))
        pe = pricing_errors(r, G, theta)
        assert np.linalg.norm(pe.mean_error) < 1e-10

    def test_mean_equals_column_mean(self, rng):
        r, g = random_panels(7)
        G = augment(g)
        theta = rng.standard_normal(3)
        pe = pricing_errors(r, G, theta)
        assert np.allclose(pe.per_period.mean(axis=0), pe.mean_error, atol=1e-10)
        m = compute_moments(r, G)
        assert np.allclose(mean_pricing_error(m, theta), pe.mean_error, atol=1e-12)

    def test_affine_in_theta(self, rng):
        r, g = random_panels(8)
        G = augment(g)
        t1, t2 = rng.standard_normal(3), rng.standard_normal(3)
        a = 0.3
        mixed = pricing_errors(r, G, a * t1 + (1 - a) * t2).per_period
        combo = (a * pricing_errors(r, G, t1).per_period
                 + (1 - a) * pricing_errors(r, G, t2).per_period)
        assert np.allclose(mixed, combo, atol=1e-12)


class TestErrorCovariance:
    def test_constant_rows(self):
        v = np.array([0.5, -1.0, 2.0])
        s = error_covariance(np.tile(v, (6, 1)))
        assert np.allclose(s, np.outer(v, v))

    def test_hand_case(self):
        s = error_covariance(np.array([[1.0], [-1.0]]))
        assert np.allclose(s, [[1.0]])

    def test_loop_oracle_and_psd(self, rng):
        e = rng.standard_normal((20, 4))
        s = error_covariance(e)
        oracle = sum(np.outer(e[t], e[t]) for t in range(20)) / 20
        assert np.allclose(s, oracle, atol=1e-12)
        assert np.allclose(s, s.T)
        assert np.linalg.eigvalsh(s).min() > -1e-12


def test_permutation_equivariance(rng):
    r, g = random_panels(9, n=5)
    G = augment(g)
    m = compute_moments(r, G)
    perm = rng.permutation(5)
    rp = return_panel(r.values[:, perm])
    mp = compute_moments(rp, G)
    assert np.allclose(mp.q_gt, m.q_gt[perm], atol=1e-14)
    assert np.allclose(mp.q_r, m.q_r[np.ix_(perm, perm)], atol=1e-14)
