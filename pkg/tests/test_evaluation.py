import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from naswd.evaluation import (betainc, classification_metrics, confusion_matrix, f_cdf, f_sf,
                              kfold_split, one_way_anova, regression_metrics, run_cv, t_interval)
from naswd.preproc import SpectraTable
from naswd.synth import SyntheticSpec, synth_table
from naswd.widedeep import ArchSpec


class TestKfold:
    def test_exact_division(self):
        assert list(kfold_split(10, 5).sizes()) == [2] * 5

    def test_remainder(self):
        assert sorted(kfold_split(11, 5).sizes()) == [2, 2, 2, 2, 3]

    def test_deterministic(self):
        assert np.array_equal(kfold_split(37, 4, 9).assignments, kfold_split(37, 4, 9).assignments)
        assert not np.array_equal(kfold_split(37, 4, 9).assignments, kfold_split(37, 4, 10).assignments)

    @given(st.integers(2, 60), st.integers(2, 10), st.integers(0, 100))
    def test_partition(self, n, k, seed):
        if n < k:
            with pytest.raises(ValueError):
                kfold_split(n, k, seed)
            return
        split = kfold_split(n, k, seed)
        tests = np.concatenate([te for _, te in split.folds()])
        assert sorted(tests) == list(range(n))
        assert np.ptp(split.sizes()) <= 1

    def test_k_too_small(self):
        with pytest.raises(ValueError):
            kfold_split(10, 1)


class TestClassification:
    def test_perfect(self):
        y = [0, 1, 2, 2, 1, 0]
        m, cm = classification_metrics(y, y)
        assert (m.accuracy, m.precision, m.recall, m.f1) == (1, 1, 1, 1)
        assert np.count_nonzero(cm - np.diag(np.diag(cm))) == 0

    def test_all_class_zero(self):
        labels = [0, 1, 2] * 3
        m, _ = classification_metrics([0] * 9, labels)
        assert m.accuracy == pytest.approx(1 / 3, abs=1e-12)
        assert m.recall == pytest.approx(1 / 3, abs=1e-12)

    def test_hand_counts(self):
        labels = [0, 0, 0, 0, 1, 1, 2, 2, 2, 2]
        preds = [0, 0, 0, 1, 1, 2, 2, 2, 2, 1]
        m, cm = classification_metrics(preds, labels)
        np.testing.assert_array_equal(cm, [[3, 1, 0], [0, 1, 1], [0, 1, 3]])
        assert m.accuracy == pytest.approx(0.7, abs=1e-12)
        assert m.precision == pytest.approx(23 / 30, abs=1e-12)
        assert m.recall == pytest.approx(0.7, abs=1e-12)
        assert m.f1 == pytest.approx(0.4 * 6 / 7 + 0.2 * 0.4 + 0.4 * 0.75, abs=1e-12)

    def test_equal_folds_zero_width_ci(self):
        m, _ = classification_metrics([0, 1], [0, 1], [0.8, 0.8, 0.8])
        assert m.ci_low == m.ci_high == pytest.approx(0.8)

    def test_t_interval(self):
        v = [0.9, 1.0, 0.95, 0.85, 1.0]
        m, lo, hi = t_interval(v)
        half = 2.7764451051977987 * np.std(v, ddof=1) / math.sqrt(5)
        assert lo == pytest.approx(m - half, abs=1e-9)
        assert hi == 1.0   # clipped

    def test_absent_class_flagged(self):
        m, _ = classification_metrics([0, 1, 2], [0, 1, 1])
        assert m.flags and "SWB" in m.flags[0]

    def test_errors(self):
        with pytest.raises(ValueError):
            classification_metrics([], [])
        with pytest.raises(ValueError):
            classification_metrics([0, 1], [0])

    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=60))
    def test_invariants(self, pairs):
        preds, labels = zip(*pairs)
        m, cm = classification_metrics(preds, labels)
        assert cm.sum() == len(pairs)
        assert m.accuracy == np.trace(cm) / cm.sum()
        for v in (m.precision, m.recall, m.f1):
            assert 0 <= v <= 1


class TestRegression:
    def test_perfect(self):
        m = regression_metrics([1, 2, 3.5], [1, 2, 3.5])
        assert (m.r, m.r2, m.rmse) == (pytest.approx(1), 1, 0)

    def test_constant_prediction(self):
        m = regression_metrics([2, 2, 2], [1, 2, 3])
        assert m.r == 0 and m.degenerate and m.r2 == pytest.approx(0, abs=1e-15)

    def test_hand_oracle(self):
        m = regression_metrics([1, 2, 3], [1, 2, 4])
        assert m.r == pytest.approx(3 * math.sqrt(3 / 28), abs=1e-12)
        assert m.r2 == pytest.approx(11 / 14, abs=1e-12)
        assert m.rmse == pytest.approx(math.sqrt(1 / 3), abs=1e-12)

    def test_zero_variance_targets(self):
        with pytest.raises(ValueError):
            regression_metrics([1, 2], [3, 3])

    def test_r2_equals_r_squared_for_ls_fit(self, rng):
        t = rng.normal(size=50)
        p = rng.normal(size=50) + t
        slope, icpt = np.polyfit(p, t, 1)
        m = regression_metrics(slope * p + icpt, t)
        assert m.r2 == pytest.approx(m.r ** 2, abs=1e-12)

    @given(st.integers(0, 10_000))
    def test_r2_at_most_one(self, seed):
        rng = np.random.default_rng(seed)
        assert regression_metrics(rng.normal(size=8), rng.normal(size=8)).r2 <= 1


class TestAnova:
    def test_identical_groups(self):
        res = one_way_anova([[1, 2, 3], [1, 2, 3]])
        assert res.f_stat == 0 and res.p_value == 1

    def test_two_groups_is_t_squared(self):
        a, b = np.array([1.0, 2.0, 4.0]), np.array([5.0, 7.0, 9.0])
        sp2 = (np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2)) / 4
        t = (a.mean() - b.mean()) / math.sqrt(sp2 * (1 / 3 + 1 / 3))
        res = one_way_anova([a, b])
        assert res.f_stat == pytest.approx(t ** 2, abs=1e-10)
        assert (res.df_between, res.df_within) == (1, 4)

    def test_separated_means(self):
        res = one_way_anova([[0, 0.01, -0.01], [0.01, 0, -0.01], [10, 10.01, 9.99]])
        assert res.p_value < 1e-6

    def test_errors(self):
        with pytest.raises(ValueError):
            one_way_anova([[1, 2]])
        with pytest.raises(ValueError):
            one_way_anova([[1, 2], [3]])
        with pytest.raises(ValueError):
            one_way_anova([[1, 1], [1, 1]])

    def test_p_monotone_in_f(self):
        ps = [f_sf(f, 2, 27) for f in np.linspace(0, 20, 201)]
        assert np.all(np.diff(ps) <= 0)

    def test_f_cdf_matches_monte_carlo(self):
        rng = np.random.default_rng(7)
        draws = (rng.chisquare(2, 10 ** 6) / 2) / (rng.chisquare(27, 10 ** 6) / 27)
        for f in (0.25, 0.75, 1.5, 3.35, 6.0):
            assert abs(f_cdf(f, 2, 27) - np.mean(draws <= f)) < 0.01

    def test_betainc_known_values(self):
        # I_x(1, 1) = x and I_x(a, 1) = x^a
        assert betainc(1, 1, 0.3) == pytest.approx(0.3, abs=1e-14)
        assert betainc(2.5, 1, 0.6) == pytest.approx(0.6 ** 2.5, abs=1e-13)
        assert betainc(3, 4, 0.5) + betainc(4, 3, 0.5) == pytest.approx(1, abs=1e-13)

    def test_f_cdf_and_sf_complement(self):
        for f in (0.1, 1, 5, 40):
            assert f_cdf(f, 3, 12) + f_sf(f, 3, 12) == pytest.approx(1, abs=1e-12)


def _toy(n, rng, d=6):
    X = rng.normal(size=(n, d))
    return SpectraTable([f"s{i}" for i in range(n)], ["whole"] * n, X, np.arange(n) % 3,
                        X @ np.arange(1.0, d + 1) + 5)


class TestRunCv:
    def test_leave_one_out(self, rng):
        rep = run_cv("plsr", "regress1", _toy(6, rng), k=6, n_components=2, normalization="none")
        assert len(rep.folds) == 6 and all(f["n_test"] == 1 for f in rep.folds)

    def test_deterministic(self, rng):
        t = _toy(18, rng)
        kw = dict(max_epochs=15, patience=15)
        a = run_cv("naswd", "classify3", t, ArchSpec(units=32), k=3, seed=2, train_kw=kw)
        b = run_cv("naswd", "classify3", t, ArchSpec(units=32), k=3, seed=2, train_kw=kw)
        assert a.to_json() == b.to_json()

    def test_fold_missing_class_skipped(self, rng):
        X = rng.normal(size=(8, 4))
        t = SpectraTable([f"s{i}" for i in range(8)], ["whole"] * 8, X, [0, 0, 0, 0, 0, 0, 1, 2],
                         np.zeros(8))
        rep = run_cv("mlp", "classify3", t, ArchSpec(units=32), k=4, seed=0,
                     train_kw=dict(max_epochs=3, patience=3))
        assert rep.skipped_folds and len(rep.folds) == 4 - len(rep.skipped_folds)

    def test_plsr_rejects_classification(self, rng):
        with pytest.raises(ValueError):
            run_cv("plsr", "classify3", _toy(9, rng), k=3)

    def test_separable_synthetic(self):
        spec = SyntheticSpec(n_per_class=(15, 15, 15), severity_sd=0.0, noise_sd=0.002,
                             coupling=0.0, sample_sd=0.001, illumination_sd=0.0, tissue_sd=0.0, seed=5)
        t = synth_table(spec, regions=False)
        rep = run_cv("naswd", "classify3", t, ArchSpec("relu", 64, 1, 0.0, 1e-2), k=3, seed=0,
                     train_kw=dict(max_epochs=500, patience=50))
        assert rep.metrics["mean_fold_accuracy"] == 1.0
