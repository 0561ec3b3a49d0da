import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pairwise_auc
from pltf.evaluation import (
    SweepReport,
    auc,
    evaluate_links,
    generate_cp,
    link_prediction_run,
    make_holdout,
    restart_seed,
    sweep_order,
    synthetic_link_tensor,
)
from pltf.inference import FitConfig
from pltf.model import Observation, build_cp


class TestGenerate:
    def test_small_setting_shape(self):
        X, factors = generate_cp((50, 50, 50), 7, 0.5, 10.0, seed=1)
        assert X.shape == (50, 50, 50)
        assert [f.shape for f in factors] == [(50, 7)] * 3

    def test_forced_ones(self):
        ones = [np.ones((d, 1)) for d in (2, 3, 4)]
        X, _ = generate_cp((2, 3, 4), 1, poisson=False, factors=ones)
        np.testing.assert_array_equal(X.values, np.ones((2, 3, 4)))

    def test_poisson_moment(self):
        X, factors = generate_cp((40, 25, 10), 2, 2.0, 1.0, seed=3)
        lam, _ = generate_cp((40, 25, 10), 2, poisson=False, factors=factors)
        n = X.values.size
        # Var(X - lam) given lam is lam, so the standard error of the mean gap is sqrt(sum lam)/n.
        se = np.sqrt(lam.values.sum()) / n
        assert abs(X.values.mean() - lam.values.mean()) < 3 * se

    def test_deterministic(self):
        a, _ = generate_cp((5, 5, 5), 2, seed=9)
        b, _ = generate_cp((5, 5, 5), 2, seed=9)
        assert np.array_equal(a.values, b.values)


class TestHoldout:
    @pytest.mark.parametrize("fraction", [0.4, 0.6, 0.8])
    def test_holdout_grid_counts(self, fraction):
        split = make_holdout((10, 12, 5), fraction, 0)
        n = 10 * 12 * 5
        assert len(split.test_index) == round(fraction * n)
        assert abs(len(split.test_index) / n - fraction) <= 0.01

    def test_zero_fraction(self):
        split = make_holdout((3, 3), 0.0, 0)
        assert np.all(split.train_mask == 1) and split.test_cells == []

    def test_fraction_one_rejected(self):
        with pytest.raises(ValueError):
            make_holdout((3, 3), 1.0, 0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6), fraction=st.floats(0.0, 0.95),
           dims=st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)))
    def test_disjoint_and_reproducible(self, seed, fraction, dims):
        a = make_holdout(dims, fraction, seed)
        b = make_holdout(dims, fraction, seed)
        assert np.array_equal(a.train_mask, b.train_mask)
        flat = a.train_mask.reshape(-1)
        assert np.all(flat[a.test_index] == 0)
        assert flat.sum() + len(a.test_index) == flat.size

    def test_labels_from_data(self):
        X = np.array([[0.0, 2.0], [1.0, 0.0]])
        split = make_holdout(X.shape, 0.5, 4, X=X)
        for cell, label in split.test_cells:
            assert label == int(X[cell] > 0)


class TestAUC:
    def test_separated(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auc([0.8, 0.9, 0.1, 0.2], [0, 0, 1, 1]) == 0.0

    def test_all_ties(self):
        assert auc([1.0] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_single_class(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [1, 1])

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_pairwise(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.integers(0, 8, size=50).astype(float)  # many ties
        labels = rng.integers(0, 2, size=50)
        labels[:2] = [0, 1]
        assert auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(-50, 50), min_size=4, max_size=30), st.integers(0, 1000))
    def test_rank_invariance(self, scores, seed):
        labels = np.random.default_rng(seed).integers(0, 2, size=len(scores))
        labels[:2] = [0, 1]
        s = np.array(scores) / 10.0
        assert auc(np.exp(s) * 3 + 1, labels) == pytest.approx(auc(s, labels), abs=1e-12)


class TestSweep:
    def test_tie_breaks_to_smaller_order(self):
        assert SweepReport([2, 3, 4], [[1.0], [5.0], [5.0]]).selected_order == 3

    def test_single_order(self, rng):
        X, _ = generate_cp((4, 4, 3), 2, seed=0)
        report = sweep_order(lambda r: build_cp(4, 4, 3, r), Observation(X), 2, 2, 2, FitConfig(max_iters=10))
        assert report.orders == [2] and report.selected_order == 2
        assert len(report.scores[0]) == 2
        assert report.to_csv().splitlines()[0] == "order,restart,bound"

    def test_restart_seeds_independent_of_enumeration(self):
        seeds = {(o, r): restart_seed(5, o, r) for o in range(2, 5) for r in range(3)}
        again = {(o, r): restart_seed(5, o, r) for r in reversed(range(3)) for o in reversed(range(2, 5))}
        assert seeds == again and len(set(seeds.values())) == 9

    def test_error_tagged_with_order_and_restart(self):
        from pltf.model import build_model
        def family(r):
            return build_model({"i": 2, "r": r}, ("i",), [("i", "r"), ("i",)], clamped={1: [1.0, 0.0]})
        with pytest.raises(Exception, match="order 1, restart 0"):
            sweep_order(family, Observation(np.array([1.0, 1.0])), 1, 1, 1, FitConfig(max_iters=2))

    def test_recovers_order_on_small_instance(self):
        X, _ = generate_cp((15, 15, 15), 3, 0.5, 10.0, seed=2)
        split = make_holdout(X.shape, 0.1, 2)
        obs = Observation(X.values * split.train_mask, split.train_mask)
        report = sweep_order(lambda r: build_cp(15, 15, 15, r), obs, 2, 5, 3, FitConfig(max_iters=500, seed=2))
        assert report.selected_order == 3


class TestLinkPrediction:
    def test_ground_truth_scores_separate_thresholded_labels(self, rng):
        factors = [rng.gamma(1.0, 1.0, size=(d, 2)) for d in (6, 5, 4)]
        lam, _ = generate_cp((6, 5, 4), 2, poisson=False, factors=factors)
        threshold = np.median(lam.values)
        labels = (lam.values > threshold).astype(int).reshape(-1)
        assert auc(lam.values.reshape(-1), labels) == 1.0

    def test_empty_split_is_error(self):
        X = synthetic_link_tensor((5, 5, 3), seed=0)
        with pytest.raises(ValueError, match="no test cells"):
            link_prediction_run(build_cp(5, 5, 3, 2), X, make_holdout(X.shape, 0.0, 0))

    def test_run_returns_probability(self):
        X = synthetic_link_tensor((12, 12, 4), seed=1, b=1.0)
        split = make_holdout(X.shape, 0.4, 1)
        value = link_prediction_run(build_cp(12, 12, 4, 2), X, split, FitConfig(max_iters=50))
        assert 0.5 < value <= 1.0

    def test_grid_shape_and_single_class_rows(self):
        rows = evaluate_links(np.zeros((4, 4, 2)), [0.4], ["em", "vb"], [1, 2], [0, 1], max_iters=5)
        assert len(rows) == 8
        assert [r.run for r in rows] == list(range(8))
        assert all(np.isnan(r.auc) for r in rows)
        assert rows[0].csv() == "0,0,0.4,em,1,"

    def test_empty_grid(self):
        assert evaluate_links(np.ones((2, 2, 2)), [0.4], ["vb"], [2], []) == []
