import numpy as np
import pytest

from hjrobust.errors import EmptyPanel, MalformedCsv, NoOverlap
from hjrobust.panels import (FactorPanel, ReturnPanel, align, augment,
                             load_panel_csv, select_assets, write_panel_csv)

from conftest import factor_panel, return_panel


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n")


class TestLoadPanelCsv:
    def test_percent_mode_returns(self, tmp_path):
        p = tmp_path / "r.csv"
        write_csv(p, ["date", "a", "b"], [["200001", "1.0", "2.0"],
                                          ["200002", "1.0", "2.0"],
                                          ["200003", "1.0", "2.0"]])
        panel = load_panel_csv(p, kind="returns", percent_mode=True)
        assert np.allclose(panel.values[:, 0], 1.010)
        assert np.allclose(panel.values[:, 1], 1.020)

    def test_no_percent_identity(self, tmp_path):
        p = tmp_path / "r.csv"
        write_csv(p, ["date", "a", "b"], [["200001", "1.0", "2.0"],
                                          ["200002", "1.0", "2.0"]])
        panel = load_panel_csv(p, kind="returns", percent_mode=False)
        assert np.array_equal(panel.values, [[1.0, 2.0], [1.0, 2.0]])

    def test_percent_mode_factors_no_shift(self, tmp_path):
        p = tmp_path / "g.csv"
        write_csv(p, ["date", "f"], [["200001", "1.5"], ["200002", "-2.0"]])
        panel = load_panel_csv(p, kind="factors", percent_mode=True)
        assert np.allclose(panel.values[:, 0], [0.015, -0.020])

    def test_na_cell_names_row(self, tmp_path):
        p = tmp_path / "r.csv"
        write_csv(p, ["date", "a"], [["200001", "1.0"], ["200002", "NA"]])
        with pytest.raises(MalformedCsv, match="row 2"):
            load_panel_csv(p, kind="returns")

    def test_row_length_mismatch(self, tmp_path):
        p = tmp_path / "r.csv"
        write_csv(p, ["date", "a", "b"], [["200001", "1.0", "2.0"], ["200002", "1.0"]])
        with pytest.raises(MalformedCsv):
            load_panel_csv(p, kind="returns")

    def test_duplicate_period(self, tmp_path):
        p = tmp_path / "r.csv"
        write_csv(p, ["date", "a"], [["200001", "1.0"], ["200001", "2.0"]])
        with pytest.raises(MalformedCsv, match="duplicate"):
            load_panel_csv(p, kind="returns")

    def test_empty_file(self, tmp_path):
        p = tmp_path / "r.csv"
        write_csv(p, ["date", "a"], [])
        with pytest.raises(EmptyPanel):
            load_panel_csv(p, kind="returns")

    def test_round_trip_bit_exact(self, tmp_path):
        # finite decimal inputs at <= 15 significant digits survive
        # load -> write -> load unchanged
        p = tmp_path / "r.csv"
        rows = [["200001", "1.234567890123", "-0.5"],
                ["200002", "3.14159265358979", "123456.789012345"]]
        write_csv(p, ["date", "a", "b"], rows)
        first = load_panel_csv(p, kind="returns", percent_mode=False)
        q = tmp_path / "w.csv"
        write_panel_csv(first, q)
        second = load_panel_csv(q, kind="returns", percent_mode=False)
        assert first.periods == second.periods
        assert np.array_equal(first.values, second.values)


class TestAlign:
    def test_identical_sets_unchanged(self):
        r = return_panel(np.ones((3, 2)) + np.arange(3)[:, None] * 0.01)
        g = factor_panel([0.1, 0.2, 0.3])
        r2, g2 = align(r, g)
        assert r2 is r and g2 is g

    def test_intersection_trims(self):
        r = ReturnPanel(["1963-01", "1963-02", "1963-03"], np.ones((3, 1)) * [[1], [2], [3]], ["a"])
        g = FactorPanel(["1962-12", "1963-01", "1963-02"], np.array([[9.0], [1.0], [2.0]]), ["f"])
        r2, g2 = align(r, g)
        assert list(r2.periods) == ["1963-01", "1963-02"] == list(g2.periods)
        assert np.array_equal(r2.values[:, 0], [1.0, 2.0])
        assert np.array_equal(g2.values[:, 0], [1.0, 2.0])

    def test_disjoint_raises(self):
        r = return_panel(np.ones((2, 1)) * [[1.0], [1.1]])
        g = FactorPanel(["x1", "x2"], np.array([[0.0], [1.0]]), ["f"])
        with pytest.raises(NoOverlap):
            align(r, g)


class TestAugment:
    def test_two_point_demeaning(self):
        g = factor_panel([1.0, 3.0])
        aug = augment(g)
        assert np.array_equal(aug.values, [[1.0, -1.0], [1.0, 1.0]])
        assert aug.factor_mean[0] == 2.0

    def test_zero_mean_passthrough(self):
        g = factor_panel([-1.0, 0.0, 1.0])
        aug = augment(g)
        assert np.array_equal(aug.values[:, 1], [-1.0, 0.0, 1.0])
        assert aug.factor_mean[0] == 0.0

    def test_integer_columns_sum_to_zero_exactly(self):
        g = factor_panel(np.array([[1.0, 4.0], [2.0, 8.0], [3.0, 0.0], [6.0, 4.0]]))
        aug = augment(g)
        assert np.all(aug.values[:, 1:].sum(axis=0) == 0.0)

    def test_mean_invariance_under_constant_shift(self):
        rng = np.random.default_rng(5)
        vals = rng.standard_normal((20, 3))
        a1 = augment(factor_panel(vals))
        a2 = augment(factor_panel(vals + np.array([3.0, -7.0, 0.25])))
        assert np.allclose(a1.values, a2.values, atol=1e-12)


def test_select_assets_subsets_columns():
    r = return_panel(np.arange(8.0).reshape(2, 4) + 1.0)
    sub = select_assets(r, [2, 0])
    assert sub.asset_names == (r.asset_names[2], r.asset_names[0])
    assert np.array_equal(sub.values, r.values[:, [2, 0]])


def test_panel_invariants_rejected():
    with pytest.raises(ValueError):
        return_panel(np.ones((1, 2)))          # T < 2
    with pytest.raises(ValueError):
        return_panel([[1.0], [np.nan]])        # non-finite
    with pytest.raises(ValueError):
        ReturnPanel(["b", "a"], np.ones((2, 1)), ["x"])  # decreasing periods
