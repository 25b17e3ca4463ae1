import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import expit

from plaus.errors import DataError, DesignError
from plaus.model import (
    BinomialLogisticFamily,
    Dataset,
    GaussianLinearFamily,
    ParamVector,
    ascertainment_logprob,
    eye_distribution_from_rate,
    fit_mle,
    knudson_estimates,
    log_likelihood,
    read_dataset_csv,
    sample,
    sample_outcomes,
)


def intercept_dataset(y, trials=2):
    y = np.asarray(y)
    return Dataset(y=y, X=np.ones((len(y), 1)), columns=("(Intercept)",),
                   trials=trials)


def two_group_dataset(y, split, trials=2):
    y = np.asarray(y)
    n = len(y)
    g = np.zeros(n)
    g[split:] = 1.0
    return Dataset(y=y, X=np.column_stack([np.ones(n), g]),
                   columns=("(Intercept)", "g"), trials=trials)


TABLE1_CARRIERS = {
    "f1": (3, 3, 1), "f2": (7, 1, 0), "f3": (5, 1, 2),
    "f4": (4, 2, 2), "f5": (6, 8, 1),
}


def table1_dataset():
    ys, fams = [], []
    for fam, cts in TABLE1_CARRIERS.items():
        for value, count in zip((0, 1, 2), cts):
            ys += [value] * count
            fams += [fam] * count
    return Dataset(y=np.array(ys), X=np.ones((len(ys), 1)),
                   columns=("(Intercept)",), trials=2,
                   meta={"family": np.array(fams)})


class TestLogLikelihood:
    def test_symmetric_single_observation(self):
        # trials 2, beta = 0, y = 1: log C(2,1) + 2 log 0.5
        ds = intercept_dataset([1])
        fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0,), trials=2)
        ll = log_likelihood(fam, ParamVector(values=np.zeros(1)), ds)
        assert_allclose(ll, math.log(2) + 2 * math.log(0.5), rtol=1e-12)

    def test_standard_normal_at_mode(self):
        ds = Dataset(y=np.zeros(2), X=np.ones((2, 1)),
                     columns=("(Intercept)",))
        fam = GaussianLinearFamily(null_cols=(0,), alt_cols=(0,),
                                   variance_mode="known", sigma2=1.0)
        ll = log_likelihood(fam, ParamVector(values=np.zeros(1)), ds)
        assert_allclose(ll, -math.log(2 * math.pi), rtol=1e-12)

    def test_matches_per_observation_pmf_sum(self):
        # Without ascertainment the likelihood is the plain product of
        # binomial pmfs; cross-check against direct evaluation.
        rng = np.random.default_rng(5)
        fam = BinomialLogisticFamily(null_cols=(0, 1), alt_cols=(0, 1),
                                     trials=2)
        for _ in range(100):
            n = int(rng.integers(3, 12))
            ds = two_group_dataset(rng.integers(0, 3, size=n),
                                   int(rng.integers(1, n)))
            theta = ParamVector(values=rng.normal(size=2))
            ll = log_likelihood(fam, theta, ds)
            pi = expit(ds.X @ theta.values)
            direct = sum(
                math.log(math.comb(2, int(y)))
                + int(y) * math.log(p) + (2 - int(y)) * math.log1p(-p)
                for y, p in zip(ds.y, pi)
            )
            assert_allclose(ll, direct, rtol=1e-10)

    def test_dimension_mismatch(self):
        ds = intercept_dataset([1, 0])
        fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0,), trials=2)
        with pytest.raises(Exception, match="coefficients"):
            log_likelihood(fam, ParamVector(values=np.zeros(2)), ds)


class TestFitMle:
    def test_table1_intercept(self):
        # 46 carriers, 27 affected eyes of 92: logit of the pooled
        # proportion is the closed-form solution.
        ds = table1_dataset()
        assert ds.n == 46 and int(ds.y.sum()) == 27
        fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0,), trials=2)
        fit = fit_mle(fam, ds)
        assert_allclose(fit.theta_hat.values[0], math.log(27 / 65), atol=1e-6)
        assert fit.converged
        assert_allclose(fit.loglik, log_likelihood(fam, fit.theta_hat, ds),
                        rtol=1e-12)

    def test_gaussian_mean_and_unbiased_variance(self):
        ds = Dataset(y=np.array([1.0, 2.0, 3.0]), X=np.ones((3, 1)),
                     columns=("(Intercept)",))
        fam = GaussianLinearFamily(null_cols=(0,), alt_cols=(0,))
        fit = fit_mle(fam, ds)
        assert_allclose(fit.theta_hat.values, [2.0], rtol=1e-12)
        assert_allclose(fit.theta_hat.sigma2, 1.0, rtol=1e-12)

    def test_zero_column_is_a_design_error(self):
        n = 6
        X = np.column_stack([np.ones(n), np.zeros(n)])
        ds = Dataset(y=np.array([0, 1, 2, 1, 0, 1]), X=X,
                     columns=("(Intercept)", "dead"), trials=2)
        fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0, 1),
                                     trials=2)
        with pytest.raises(DesignError, match="dead"):
            fit_mle(fam, ds, "alt")

    def test_separation_is_clamped_not_fatal(self):
        ds = intercept_dataset([0, 0, 0, 0])
        fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0,), trials=2)
        fit = fit_mle(fam, ds)
        assert not fit.converged
        assert abs(fit.theta_hat.values[0]) == 15.0

    def test_mle_dominates_random_perturbations(self):
        rng = np.random.default_rng(11)
        ds = two_group_dataset(rng.integers(0, 3, size=20), 9)
        fam = BinomialLogisticFamily(null_cols=(0, 1), alt_cols=(0, 1),
                                     trials=2)
        fit = fit_mle(fam, ds)
        for _ in range(200):
            other = ParamVector(
                values=fit.theta_hat.values + rng.normal(scale=0.5, size=2)
            )
            assert log_likelihood(fam, other, ds) <= fit.loglik + 1e-12

    def test_score_equations_at_mle(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            n = 40
            x = rng.standard_normal(n)
            X = np.column_stack([np.ones(n), x])
            eta = X @ np.array([0.2, 0.6])
            y = rng.binomial(2, expit(eta))
            ds = Dataset(y=y, X=X, columns=("(Intercept)", "x"), trials=2)
            fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0, 1),
                                         trials=2)
            fit = fit_mle(fam, ds, "alt")
            if not fit.converged:
                continue
            score = X.T @ (y - 2 * expit(X @ fit.theta_hat.values))
            assert np.abs(score).max() < 1e-6


class TestSampler:
    def test_degenerate_probability(self):
        ds = intercept_dataset([0] * 5)
        fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0,), trials=2)
        out = sample(fam, ParamVector(values=np.array([-40.0])), ds, seed=1)
        assert (out.y == 0).all()

    def test_seed_determinism(self):
        ds = intercept_dataset([0] * 50)
        fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0,), trials=2)
        theta = ParamVector(values=np.array([0.3]))
        a = sample(fam, theta, ds, seed=7)
        b = sample(fam, theta, ds, seed=7)
        assert np.array_equal(a.y, b.y)

    def test_law_of_large_numbers(self):
        ds = intercept_dataset([0] * 10_000)
        fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0,), trials=2)
        out = sample(fam, ParamVector(values=np.zeros(1)), ds, seed=2)
        assert abs(out.y.mean() / 2 - 0.5) < 0.02

    def test_moment_check_within_four_se(self):
        n = 10_000
        rng = np.random.default_rng(9)
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        ds = Dataset(y=np.zeros(n, dtype=np.int64), X=X,
                     columns=("(Intercept)", "x"), trials=2)
        fam = BinomialLogisticFamily(null_cols=(0, 1), alt_cols=(0, 1),
                                     trials=2)
        theta = ParamVector(values=np.array([0.4, -0.7]))
        out = sample(fam, theta, ds, seed=3)
        pi = expit(X @ theta.values)
        mean = 2 * pi.sum()
        se = math.sqrt((2 * pi * (1 - pi)).sum())
        assert abs(out.y.sum() - mean) < 4 * se

    def test_gaussian_sampler_matches_known_variance(self):
        n = 20_000
        ds = Dataset(y=np.zeros(n), X=np.ones((n, 1)),
                     columns=("(Intercept)",))
        fam = GaussianLinearFamily(null_cols=(0,), alt_cols=(0,),
                                   variance_mode="known", sigma2=4.0)
        out = sample_outcomes(fam, ParamVector(values=np.array([1.0])), ds,
                              seed=4, size=1)[:, 0]
        assert abs(out.mean() - 1.0) < 4 * 2 / math.sqrt(n)
        assert abs(out.std() - 2.0) < 0.05


class TestKnudson:
    def test_hand_example(self):
        p, lam, lam_i, dist = knudson_estimates(4, 4, 2)
        assert_allclose(p, 0.4, rtol=1e-12)
        assert_allclose(lam, -math.log(0.6), rtol=1e-12)
        assert_allclose(lam_i, -2 * math.log(0.6), rtol=1e-12)
        assert_allclose(sum(dist), 1.0, rtol=1e-12)

    def test_no_tumours(self):
        p, lam, lam_i, dist = knudson_estimates(10, 0, 0)
        assert p == 0.0 and lam == 0.0
        assert dist == (1.0, 0.0, 0.0)

    def test_all_bilateral_gives_infinite_rate(self):
        p, lam, lam_i, _ = knudson_estimates(0, 0, 5)
        assert p == 1.0 and math.isinf(lam) and math.isinf(lam_i)

    def test_rate_three_distribution(self):
        # p = 1 - exp(-1.5); probabilities ((1-p)^2, 2p(1-p), p^2)
        p = 1 - math.exp(-1.5)
        dist = eye_distribution_from_rate(3.0)
        assert_allclose(dist, ((1 - p) ** 2, 2 * p * (1 - p), p**2),
                        rtol=1e-12)
        assert_allclose(dist, (0.0497871, 0.3466862, 0.6035267), atol=5e-8)


class TestAscertainment:
    def test_single_member_half(self):
        ds = Dataset(y=np.array([1]), X=np.ones((1, 1)),
                     columns=("(Intercept)",), trials=2,
                     meta={"family": np.array(["a"])})
        fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0,), trials=2,
                                     ascertainment=True)
        val = ascertainment_logprob(fam, ParamVector(values=np.zeros(1)), ds)
        assert_allclose(val, math.log(0.75), rtol=1e-12)

    def test_two_members_point_one(self):
        # log(1 - 0.81^2) = log(0.3439)
        ds = Dataset(y=np.array([1, 0]), X=np.ones((2, 1)),
                     columns=("(Intercept)",), trials=2,
                     meta={"family": np.array(["a", "a"])})
        fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0,), trials=2,
                                     ascertainment=True)
        theta = ParamVector(values=np.array([math.log(0.1 / 0.9)]))
        val = ascertainment_logprob(fam, theta, ds)
        assert_allclose(val, math.log(1 - 0.81**2), rtol=1e-10)

    def test_certain_affection_contributes_zero(self):
        ds = Dataset(y=np.array([2]), X=np.ones((1, 1)),
                     columns=("(Intercept)",), trials=2,
                     meta={"family": np.array(["a"])})
        fam = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0,), trials=2,
                                     ascertainment=True)
        val = ascertainment_logprob(fam, ParamVector(values=np.array([40.0])),
                                    ds)
        assert abs(val) < 1e-30
        exact = ascertainment_logprob(
            fam, ParamVector(values=np.array([800.0])), ds
        )
        assert exact == 0.0

    def test_correction_shifts_the_likelihood(self):
        ds = Dataset(y=np.array([1, 2, 0]), X=np.ones((3, 1)),
                     columns=("(Intercept)",), trials=2,
                     meta={"family": np.array(["a", "a", "b"])})
        plain = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0,),
                                       trials=2)
        asc = BinomialLogisticFamily(null_cols=(0,), alt_cols=(0,), trials=2,
                                     ascertainment=True)
        theta = ParamVector(values=np.array([0.1]))
        diff = log_likelihood(plain, theta, ds) - log_likelihood(asc, theta, ds)
        assert_allclose(diff, ascertainment_logprob(asc, theta, ds),
                        rtol=1e-12)


class TestCsvIngestion:
    def test_factor_expansion_and_reserved_columns(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text(
            "y,family,poo,fid,dose\n"
            "0,a,0,fa,1.5\n"
            "1,a,1,fa,2.0\n"
            "2,b,0,fb,0.5\n"
            "1,b,1,fc,1.0\n"
        )
        ds = read_dataset_csv(path)
        assert ds.columns == ("(Intercept)", "poo", "fid:fb", "fid:fc", "dose")
        assert ds.terms["fid"] == (2, 3)
        assert "family" in ds.meta
        assert_allclose(ds.X[:, 2], [0, 0, 1, 0])

    def test_missing_outcome_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(DataError, match="outcome"):
            read_dataset_csv(path)

    def test_outcome_bounds_validated(self, tmp_path):
        path = tmp_path / "bad2.csv"
        path.write_text("y\n3\n")
        with pytest.raises(DataError, match="binomial outcomes"):
            read_dataset_csv(path)

    def test_trials_must_be_constant(self, tmp_path):
        path = tmp_path / "bad3.csv"
        path.write_text("y,trials\n1,2\n1,3\n")
        with pytest.raises(DataError, match="constant"):
            read_dataset_csv(path)


class TestDataset:
    def test_class_labels_partition_identical_rows(self):
        X = np.array([[1, 0], [1, 1], [1, 0], [1, 1.0]])
        ds = Dataset(y=np.array([0, 1, 2, 0]), X=X, columns=("a", "b"),
                     trials=2)
        labels = ds.class_labels
        assert labels[0] == labels[2] and labels[1] == labels[3]
        assert labels[0] != labels[1]

    def test_arrays_are_immutable(self):
        ds = intercept_dataset([1, 0])
        with pytest.raises(ValueError):
            ds.y[0] = 2
