import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from losfield.losmodel import FitResult, ProbabilityCurve
from losfield.stats import (METHOD_ORDER, BatchResults, SiteResults, best_model_per_site, mean_rmse, quantile_groups,
                            rmse, rmse_cdf)


def site(sid, frac=0.5, **scores):
    return SiteResults(sid, frac, {m: FitResult(sid, m, {}, v, frac) for m, v in scores.items()})


def batch(rows):
    return BatchResults([site(*r[:2], **r[2]) for r in rows])


class TestRmse:
    def test_exact_model(self):
        c = ProbabilityCurve([0, 10, 20, 30], [1.0, 0.5, 0.2], [3, 4, 5])
        lookup = dict(zip([5.0, 15.0, 25.0], [1.0, 0.5, 0.2]))
        assert rmse(c, lambda d: [lookup[v] for v in d]) == 0.0

    @given(st.floats(-0.5, 0.5))
    def test_constant_offset(self, eps):
        c = ProbabilityCurve([0, 10, 20, 30], [0.5, 0.5, 0.5], [1, 7, 30])
        assert rmse(c, lambda d: np.full(len(d), 0.5 + eps)) == pytest.approx(abs(eps), abs=1e-15)

    def test_hand_value(self):
        c = ProbabilityCurve([0, 10, 20], [0.5, 0.5], [10, 10])
        assert rmse(c, lambda d: np.where(d < 10, 0.5, 0.7)) == pytest.approx(math.sqrt(0.02), abs=1e-12)
        assert round(rmse(c, lambda d: np.where(d < 10, 0.5, 0.7)), 4) == 0.1414

    def test_weighting(self):
        c = ProbabilityCurve([0, 10, 20], [0.0, 0.0], [1, 3])
        model = lambda d: np.where(d < 10, 0.0, 1.0)
        assert rmse(c, model) == pytest.approx(math.sqrt(0.75))
        assert rmse(c, model, weighted=False) == pytest.approx(math.sqrt(0.5))

    def test_empty_bins_ignored(self):
        c = ProbabilityCurve([0, 10, 20], [0.4, np.nan], [5, 0])
        assert rmse(c, lambda d: np.full(len(d), 0.4)) == 0.0

    def test_no_bins(self):
        with pytest.raises(ValueError):
            rmse(ProbabilityCurve([0, 10], [np.nan], [0]), lambda d: d)

    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.integers(1, 500)), min_size=1, max_size=30),
           st.randoms())
    def test_permutation_invariant(self, rows, rnd):
        def make(rs):
            p, m, n = (np.array(v) for v in zip(*rs))
            edges = np.arange(len(rs) + 1) * 10.0
            centers = edges[:-1] + 5
            table = dict(zip(centers, m))
            return ProbabilityCurve(edges, p, n), lambda d: np.array([table[v] for v in d])
        shuffled = rows[:]
        rnd.shuffle(shuffled)
        a, b = make(rows), make(shuffled)
        assert rmse(*a) == pytest.approx(rmse(*b), rel=1e-12, abs=1e-15)


class TestCdf:
    def test_single_site(self):
        v, f = rmse_cdf(batch([("a", 0.5, {"Fitted3gpp": 0.02})]), "Fitted3gpp")
        np.testing.assert_array_equal(v, [0.02])
        np.testing.assert_array_equal(f, [1.0])

    def test_three_values(self):
        b = batch([(s, 0.5, {"DualTrig": r}) for s, r in zip("cab", [0.03, 0.01, 0.02])])
        v, f = rmse_cdf(b, "DualTrig")
        np.testing.assert_array_equal(v, [0.01, 0.02, 0.03])
        assert f[1] == pytest.approx(2 / 3)

    def test_ties_share_step(self):
        b = batch([(s, 0.5, {"DualTrig": r}) for s, r in zip("abc", [0.01, 0.01, 0.02])])
        _, f = rmse_cdf(b, "DualTrig")
        np.testing.assert_allclose(f, [2 / 3, 2 / 3, 1.0])

    def test_unknown_method(self):
        with pytest.raises(KeyError, match="DualSvc"):
            rmse_cdf(batch([("a", 0.5, {"DualTrig": 0.1})]), "DualSvc")

    def test_empty(self):
        with pytest.raises(ValueError):
            rmse_cdf(BatchResults(), "DualTrig")

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
    def test_monotone_reaches_one(self, values):
        b = batch([(f"s{i}", 0.5, {"Fitted3gpp": v}) for i, v in enumerate(values)])
        v, f = rmse_cdf(b, "Fitted3gpp")
        assert np.all(np.diff(v) >= 0) and np.all(np.diff(f) >= 0)
        assert f[-1] == 1.0


class TestBestModel:
    def test_single_method(self):
        b = batch([("a", 0.5, {"Fitted3gpp": 0.3}), ("b", 0.2, {"Fitted3gpp": 0.1})])
        assert [m for _, m, _ in best_model_per_site(b)] == ["Fitted3gpp", "Fitted3gpp"]

    def test_dual_wins(self):
        b = batch([("a", 0.5, {"Fitted3gpp": 0.02, "DualTrig": 0.01})])
        assert best_model_per_site(b) == [("a", "DualTrig", 0.01)]

    def test_tie_goes_to_canonical_order(self):
        b = batch([("a", 0.5, {"DualSvc": 0.01, "DualTrig": 0.01, "Fitted3gppMinLos": 0.01})])
        assert best_model_per_site(b)[0][1] == "Fitted3gppMinLos"

    def test_subset(self):
        b = batch([("a", 0.5, {"Fitted3gpp": 0.02, "DualTrig": 0.01})])
        assert best_model_per_site(b, ["Fitted3gpp"])[0][1] == "Fitted3gpp"

    @given(st.lists(st.sampled_from([0.01, 0.02, 0.03]), min_size=5, max_size=5), st.permutations(METHOD_ORDER))
    def test_method_order_invariant(self, scores, perm):
        b = batch([("a", 0.5, dict(zip(METHOD_ORDER, scores)))])
        assert best_model_per_site(b, list(perm)) == best_model_per_site(b, list(METHOD_ORDER))

    def test_mean_rmse(self):
        b = batch([("a", 0.5, {"Fitted3gpp": 0.02, "DualTrig": 0.01}), ("b", 0.5, {"Fitted3gpp": 0.03, "DualTrig": 0.05})])
        assert mean_rmse(b, ["DualTrig"]) == pytest.approx(0.03)
        assert mean_rmse(b, ["Fitted3gpp", "DualTrig"]) == pytest.approx(0.02)


class TestQuantileGroups:
    def test_ten_sites_five_groups(self):
        b = batch([(f"s{i:02d}", i / 10, {"Fitted3gpp": 0.01 * (i + 1)}) for i in range(10)])
        groups = quantile_groups(b)
        assert [g.count for g in groups] == [2] * 5
        assert groups[0].site_ids == ("s00", "s01")
        assert groups[0].rmse_range == (0.01, 0.02)
        assert groups[4].los_fraction_range == (0.8, 0.9)
        assert groups[2].winners == {"Fitted3gpp": 2}

    def test_identical_rmse_tie_by_site_id(self):
        b = batch([(sid, 0.5, {"DualTrig": 0.05}) for sid in ["e", "b", "d", "a", "c"]])
        assert [g.site_ids for g in quantile_groups(b)] == [("a",), ("b",), ("c",), ("d",), ("e",)]

    def test_too_few_sites(self):
        with pytest.raises(ValueError, match="at least 5"):
            quantile_groups(batch([("a", 0.5, {"DualTrig": 0.1})]))

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.integers(1, 8))
    def test_partition(self, values, k):
        b = batch([(f"s{i}", 0.5, {"DualTrig": v}) for i, v in enumerate(values)])
        if len(values) < k:
            with pytest.raises(ValueError):
                quantile_groups(b, k)
            return
        groups = quantile_groups(b, k)
        ids = [s for g in groups for s in g.site_ids]
        assert sorted(ids) == sorted(s.site_id for s in b.sites)
        counts = [g.count for g in groups]
        assert sum(counts) == len(values) and max(counts) - min(counts) <= 1
        # groups are ordered by best rmse
        for g, h in zip(groups, groups[1:]):
            assert g.rmse_range[1] <= h.rmse_range[0]
