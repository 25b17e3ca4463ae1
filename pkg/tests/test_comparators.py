import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import chi2

from plaus.comparators import (
    bootstrap_test,
    default_split_penalty,
    lasso_multi_split,
    lr_test,
    pearson_gof,
)
from plaus.errors import DataError, ParameterError
from plaus.model import BinomialLogisticFamily, Dataset, fit_mle


def two_group_dataset(y, split, trials=2):
    y = np.asarray(y)
    n = len(y)
    g = np.zeros(n)
    g[split:] = 1.0
    return Dataset(y=y, X=np.column_stack([np.ones(n), g]),
                   columns=("(Intercept)", "g"), trials=trials)


class TestLrTest:
    def test_identical_loglik_gives_p_one(self):
        # Null data carrying no group signal: both fits agree and p is 1 at
        # statistic zero when the group adds nothing.
        ds = two_group_dataset([1, 1, 1, 1, 1, 1], 3)
        out = lr_test(ds, "binomial", (0,), (0, 1))
        assert out.statistic == 0.0 and out.p_value == 1.0

    def test_chi_square_tail_values(self):
        # Frozen survival values of the chi-square(1) reference.
        assert_allclose(chi2.sf(3.841, 1), 0.0500, atol=5e-5)
        assert_allclose(chi2.sf(9.645, 1), 0.0019, atol=5e-5)
        ds = two_group_dataset([0, 0, 0, 0, 2, 2, 2, 2], 4)
        out = lr_test(ds, "binomial", (0,), (0, 1))
        assert_allclose(out.p_value, chi2.sf(out.statistic, 1), rtol=1e-12)

    def test_identical_models_error(self):
        ds = two_group_dataset([1, 0, 2, 1], 2)
        with pytest.raises(ParameterError, match="df"):
            lr_test(ds, "binomial", (0,), (0,))

    def test_statistic_is_twice_the_loglik_gain(self):
        rng = np.random.default_rng(8)
        ds = two_group_dataset(rng.integers(0, 3, size=10), 5)
        fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0, 1),
                                     trials=2)
        out = lr_test(ds, "binomial", (0,), (0, 1))
        f0 = fit_mle(fam, ds, "null")
        f1 = fit_mle(fam, ds, "alt")
        assert_allclose(out.statistic, 2 * (f1.loglik - f0.loglik),
                        atol=1e-10)


class TestPearsonGof:
    def test_exact_fit_gives_zero(self):
        # One class of four observations with p-hat = .5: expected counts
        # (1, 2, 1) match the observed ones exactly.
        ds = Dataset(y=np.array([0, 1, 1, 2]), X=np.ones((4, 1)),
                     columns=("(Intercept)",), trials=2)
        out = pearson_gof(ds, "binomial", (0,))
        assert_allclose(out.statistic, 0.0, atol=1e-12)
        assert out.p_value == 1.0

    def test_detects_overdispersion(self):
        ds = Dataset(y=np.array([0, 0, 0, 0, 2, 2, 2, 2]),
                     X=np.ones((8, 1)), columns=("(Intercept)",), trials=2)
        out = pearson_gof(ds, "binomial", (0,))
        assert out.statistic > 6.0
        assert out.p_value < 0.05

    def test_degenerate_cells_merged(self):
        ds = Dataset(y=np.array([0, 0, 0, 0, 0, 0]), X=np.ones((6, 1)),
                     columns=("(Intercept)",), trials=2)
        out = pearson_gof(ds, "binomial", (0,))
        assert out.meta["merged"] >= 1
        assert 0.0 <= out.p_value <= 1.0

    def test_df_floor(self):
        ds = Dataset(y=np.array([0, 1]), X=np.ones((2, 1)),
                     columns=("(Intercept)",), trials=2)
        out = pearson_gof(ds, "binomial", (0,))
        assert out.df >= 1


class TestBootstrapTest:
    def test_zero_statistic_gives_one(self):
        ds = two_group_dataset([1, 1, 1, 1, 1, 1], 3)
        out = bootstrap_test(ds, "binomial", (0,), (0, 1), B=200, seed=1)
        assert out.p_value == 1.0

    def test_seed_determinism(self):
        ds = two_group_dataset([0, 1, 2, 0, 2, 2, 1, 0], 4)
        a = bootstrap_test(ds, "binomial", (0,), (0, 1), B=300, seed=5)
        b = bootstrap_test(ds, "binomial", (0,), (0, 1), B=300, seed=5)
        assert a.p_value == b.p_value

    def test_never_zero(self):
        ds = two_group_dataset([0, 0, 0, 0, 2, 2, 2, 2], 4)
        out = bootstrap_test(ds, "binomial", (0,), (0, 1), B=500, seed=2)
        assert out.p_value >= 1.0 / 501.0

    def test_minimum_replicates(self):
        ds = two_group_dataset([0, 1, 2, 1], 2)
        with pytest.raises(ParameterError, match="B >= 100"):
            bootstrap_test(ds, "binomial", (0,), (0, 1), B=10, seed=0)

    @pytest.mark.slow
    def test_null_size_tracks_alpha(self):
        from dataclasses import replace

        from plaus.sim import PedigreeScenario, simulate_pedigree

        R = 400
        sc = PedigreeScenario()
        pvals = np.empty(R)
        for rep in range(R):
            ds = simulate_pedigree(replace(sc, seed=50_000 + rep))
            pvals[rep] = bootstrap_test(ds, "binomial", "y ~ 1", "y ~ fid",
                                        B=1000, seed=rep).p_value
        for alpha in (0.05, 0.2, 0.5):
            assert abs((pvals < alpha).mean() - alpha) < 0.05

    @pytest.mark.slow
    def test_p_values_stochastically_dominate_uniform(self):
        from dataclasses import replace

        from plaus.sim import PedigreeScenario, simulate_pedigree

        R = 600
        sc = PedigreeScenario()
        pvals = np.empty(R)
        for rep in range(R):
            ds = simulate_pedigree(replace(sc, seed=60_000 + rep))
            pvals[rep] = bootstrap_test(ds, "binomial", "y ~ 1", "y ~ fid",
                                        B=500, seed=rep).p_value
        # Monte Carlo tolerance acknowledges the B-discrete p grid.
        for alpha in (0.05, 0.1, 0.2, 0.3, 0.5):
            bound = alpha + 3 * math.sqrt(alpha * (1 - alpha) / R) + 0.02
            assert (pvals <= alpha).mean() <= bound


class TestLassoMultiSplit:
    def test_no_selection_gives_one(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((40, 30))
        y = rng.standard_normal(40)
        out = lasso_multi_split(X, y, n_splits=5, lambda_fixed=1e4, seed=0)
        assert out.p_value == 1.0
        assert out.meta["mean_selected"] == 0.0

    def test_detects_strong_signal(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((100, 40))
        y = X[:, 0] * 3.0 + rng.standard_normal(100)
        out = lasso_multi_split(X, y, n_splits=10, seed=1)
        assert out.p_value < 0.01

    def test_seed_determinism_and_bounds(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((60, 50))
        y = rng.standard_normal(60)
        a = lasso_multi_split(X, y, n_splits=4, seed=9)
        b = lasso_multi_split(X, y, n_splits=4, seed=9)
        assert a.p_value == b.p_value
        assert 0.0 <= a.p_value <= 1.0

    def test_default_penalty_value(self):
        assert_allclose(default_split_penalty(200, 500),
                        math.sqrt(700) / 10, rtol=1e-12)

    def test_even_sample_required(self):
        rng = np.random.default_rng(6)
        with pytest.raises(DataError):
            lasso_multi_split(rng.standard_normal((21, 5)),
                              rng.standard_normal(21))

    def test_selection_cap(self):
        # Saturating selection triggers the truncation guard instead of a
        # rank failure on the estimation half.
        rng = np.random.default_rng(7)
        n, p = 24, 40
        X = rng.standard_normal((n, p))
        y = X @ rng.normal(size=p) * 0.5 + 0.1 * rng.standard_normal(n)
        out = lasso_multi_split(X, y, n_splits=4, lambda_fixed=1.5, seed=2)
        assert out.meta["truncated_splits"] >= 1
        assert 0.0 <= out.p_value <= 1.0

    @pytest.mark.slow
    def test_null_size_is_conservative(self):
        rng = np.random.default_rng(8)
        R = 120
        hits = 0
        for rep in range(R):
            X = rng.standard_normal((60, 120))
            y = rng.standard_normal(60)
            out = lasso_multi_split(X, y, n_splits=15, seed=rep)
            hits += out.p_value < 0.05
        se = math.sqrt(0.05 * 0.95 / R)
        assert hits / R <= 0.05 + 2 * se
