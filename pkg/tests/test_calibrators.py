import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_isotonic, penalized_logistic_oracle
from posthoc_uq.calibrators import (
    IsotonicModel,
    PlattParams,
    VennAbersModel,
    _platt_objective,
    isotonic_predict,
    merge_venn_abers,
    pava_fit,
    platt_apply,
    platt_fit,
    venn_abers_predict,
)
from posthoc_uq.core import InputError, ScoreLabelPair
from posthoc_uq.metrics import auroc


def platt_data(seed, n=2000):
    f = np.linspace(0.0, 1.0, n)
    y = (np.random.default_rng(seed).random(n) < 1.0 / (1.0 + np.exp(1.0 - 2.0 * f))).astype(int)
    return f, y


class TestPlattFit:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_independent_optimizer(self, seed):
        f, y = platt_data(seed)
        fit = platt_fit(f, y)
        theta, _ = penalized_logistic_oracle(f, y, 1e-6)
        assert fit.converged
        assert fit.a == pytest.approx(theta[0], abs=1e-5)
        assert fit.b == pytest.approx(theta[1], abs=1e-5)

    def test_recovery_is_unbiased_across_seeds(self):
        ab = np.array([[p.a, p.b] for p in (platt_fit(*platt_data(s)) for s in range(30))])
        mean = ab.mean(axis=0)
        assert abs(mean[0] - 1.0) < 0.1 and abs(mean[1] + 2.0) < 0.1

    def test_identical_scores_balanced(self):
        params = platt_fit(np.full(40, 0.5), np.r_[np.zeros(20), np.ones(20)].astype(int))
        assert platt_apply(params, 0.5) == pytest.approx(0.5, abs=1e-3)

    def test_separable_stays_finite(self):
        f = np.r_[np.full(50, 0.1), np.full(50, 0.9)]
        y = np.r_[np.zeros(50), np.ones(50)].astype(int)
        params = platt_fit(f, y)
        assert params.converged
        assert math.isfinite(params.a) and math.isfinite(params.b)
        assert platt_apply(params, 0.9) > 0.99
        # same penalized objective, general-purpose optimizer
        _, oracle_obj = penalized_logistic_oracle(f, y, 1e-6, params.a, params.b)
        assert _platt_objective(np.array([params.a, params.b]), f, y.astype(float), 1e-6) \
            <= oracle_obj + 1e-6

    def test_single_class_rejected(self):
        with pytest.raises(InputError):
            platt_fit([0.1, 0.5, 0.9], [1, 1, 1])

    def test_max_iter_reports_flag(self):
        f, y = platt_data(0)
        params = platt_fit(f, y, max_iter=1)
        assert not params.converged and params.n_iter == 1

    def test_smoothed_targets_shrink_extremes(self):
        f = np.r_[np.full(10, 0.1), np.full(10, 0.9)]
        y = np.r_[np.zeros(10), np.ones(10)].astype(int)
        plain = platt_apply(platt_fit(f, y), 0.9)
        smooth = platt_apply(platt_fit(f, y, smooth_targets=True), 0.9)
        assert smooth == pytest.approx(11 / 12, abs=1e-4)
        assert smooth < plain

    def test_rank_preserving(self):
        rng = np.random.default_rng(11)
        f = rng.random(200)
        y = (rng.random(200) < f).astype(int)
        params = platt_fit(f, y)
        assert params.b < 0
        p = platt_apply(params, f)
        assert auroc(p, y) == auroc(f, y)
        order = np.argsort(f)
        assert np.all(np.diff(p[order]) > 0)


class TestPlattApply:
    @pytest.mark.parametrize("a,b,f,expected", [
        (0.0, 0.0, 0.37, 0.5),
        (1.0, -2.0, 0.5, 0.5),
        (0.0, -4.0, 1.0, 1.0 / (1.0 + math.exp(-4.0))),
    ])
    def test_examples(self, a, b, f, expected):
        assert platt_apply(PlattParams(a, b), f) == pytest.approx(expected, abs=1e-12)

    def test_non_finite_params(self):
        with pytest.raises(InputError):
            PlattParams(math.nan, 1.0)


class TestPava:
    def test_already_monotone(self):
        m = pava_fit([0.1, 0.2, 0.3, 0.4], [0, 0, 1, 1])
        np.testing.assert_array_equal(m([0.1, 0.2, 0.3, 0.4]), [0, 0, 1, 1])

    def test_pooled_pair(self):
        m = pava_fit([0.3, 0.7], [1, 0])
        assert m.knot_scores.tolist() == [0.3]
        assert m.knot_values.tolist() == [0.5]
        assert m.knot_weights.tolist() == [2.0]

    def test_middle_violation(self):
        m = pava_fit([0.2, 0.4, 0.6, 0.8], [0, 1, 0, 1])
        np.testing.assert_allclose(m([0.2, 0.4, 0.6, 0.8]), [0, 0.5, 0.5, 1], atol=1e-15)

    def test_ties_are_pre_pooled(self):
        m = pava_fit([0.5, 0.5, 0.5, 0.9], [1, 0, 0, 1])
        assert m.knot_scores.tolist() == [0.5, 0.9]
        assert m.knot_values[0] == pytest.approx(1 / 3)

    def test_input_order_irrelevant(self):
        a = pava_fit([0.4, 0.1, 0.3], [1, 0, 0])
        b = pava_fit([0.1, 0.3, 0.4], [0, 0, 1])
        np.testing.assert_array_equal(a.knot_scores, b.knot_scores)
        np.testing.assert_array_equal(a.knot_values, b.knot_values)

    @pytest.mark.parametrize("n", range(1, 8))
    def test_exhaustive_against_oracle(self, n):
        grid = np.linspace(0.05, 0.95, n)
        for labels in itertools.product((0, 1), repeat=n):
            fitted = pava_fit(grid, labels)(grid)
            np.testing.assert_allclose(fitted, brute_isotonic(labels), atol=1e-9)

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 1)), min_size=1, max_size=7))
    def test_weighted_tied_scores_against_oracle(self, pairs):
        s, y = map(np.asarray, zip(*pairs))
        order = np.argsort(s, kind="stable")
        s, y = s[order] / 4.0, y[order]
        # oracle on the tie-pooled problem: one weighted point per distinct score
        uniq = np.unique(s)
        w = np.array([np.sum(s == u) for u in uniq], float)
        ybar = np.array([y[s == u].mean() for u in uniq])
        np.testing.assert_allclose(pava_fit(s, y)(uniq), brute_isotonic(ybar, w), atol=1e-9)

    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=30))
    def test_values_in_unit_interval_and_monotone(self, pairs):
        s, y = zip(*pairs)
        m = pava_fit(s, y)
        assert np.all((m.knot_values >= 0) & (m.knot_values <= 1))
        assert np.all(np.diff(m(np.linspace(-0.1, 1.1, 50))) >= 0)

    def test_bad_weights(self):
        with pytest.raises(InputError):
            pava_fit([0.1, 0.2], [0, 1], weights=[1.0, 0.0])


class TestIsotonicPredict:
    model = IsotonicModel(np.array([0.2, 0.6, 0.9]), np.array([0.0, 0.5, 1.0]), np.ones(3))

    def test_predecessor_rule(self):
        assert isotonic_predict(self.model, 0.7) == 0.5

    def test_exact_knot(self):
        assert isotonic_predict(self.model, 0.6) == 0.5

    def test_clamps(self):
        assert isotonic_predict(self.model, 0.0) == 0.0
        assert isotonic_predict(self.model, 1.0) == 1.0

    def test_empty_model(self):
        empty = IsotonicModel(np.array([]), np.array([]), np.array([]))
        with pytest.raises(InputError):
            isotonic_predict(empty, 0.5)

    def test_invalid_knots(self):
        with pytest.raises(InputError):
            IsotonicModel(np.array([0.5, 0.2]), np.array([0.0, 1.0]), np.ones(2))
        with pytest.raises(InputError):
            IsotonicModel(np.array([0.2, 0.5]), np.array([1.0, 0.0]), np.ones(2))


class TestVennAbers:
    def test_hand_case(self):
        model = VennAbersModel.from_pairs([ScoreLabelPair(0.1, 0), ScoreLabelPair(0.9, 1)])
        p0, p1, p = venn_abers_predict(model, 0.9)
        assert p0 == pytest.approx(0.5, abs=1e-9)
        assert p1 == pytest.approx(1.0, abs=1e-9)
        assert p == pytest.approx(2 / 3, abs=1e-9)

    def test_merge_formula(self):
        assert merge_venn_abers(0.2, 0.6) == pytest.approx(0.6 / 1.4, abs=1e-12)
        assert merge_venn_abers(0.3, 0.3) == pytest.approx(0.3, abs=1e-15)

    def test_randomized_ordering(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            m = int(rng.integers(1, 15))
            model = VennAbersModel(rng.random(m).round(2), rng.integers(0, 2, m))
            p0, p1, p = venn_abers_predict(model, round(float(rng.random()), 2))
            assert p0 <= p1 + 1e-12
            assert min(p0, p1) - 1e-12 <= p <= max(p0, p1) + 1e-12

    def test_empty_calibration(self):
        with pytest.raises(InputError):
            venn_abers_predict(VennAbersModel(np.array([]), np.array([], int)), 0.5)
