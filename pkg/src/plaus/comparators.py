"""Baseline tests benchmarked against plausibility procedures.

Asymptotic likelihood-ratio and Pearson goodness-of-fit tests, a parametric
bootstrap of the LR statistic, and the lasso multi-split procedure for
high-dimensional global nulls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2, t as t_dist

from .errors import DataError, ParameterError
from .model import (
    BinomialLogisticFamily,
    Dataset,
    GaussianLinearFamily,
    _batch_irls,
    fit_mle,
    sample_outcomes,
)
from .penalized import PenaltySpec, fit_elastic_net
from .seeding import rng_for

__all__ = [
    "TestResult",
    "lr_test",
    "pearson_gof",
    "bootstrap_test",
    "lasso_multi_split",
]


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int | None
    p_value: float
    method: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ParameterError("p_value must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "meta": dict(self.meta),
        }


def _resolve_family(data: Dataset, null_formula, alt_formula, family: str):
    from .formula import formula_columns

    null_cols = (tuple(null_formula) if isinstance(null_formula, (tuple, list))
                 else formula_columns(data, null_formula))
    alt_cols = (tuple(alt_formula) if isinstance(alt_formula, (tuple, list))
                else formula_columns(data, alt_formula))
    if family == "binomial":
        return BinomialLogisticFamily(null_cols=null_cols, alt_cols=alt_cols,
                                      trials=data.trials)
    if family == "gaussian":
        return GaussianLinearFamily(null_cols=null_cols, alt_cols=alt_cols)
    raise ParameterError(f"unknown family {family!r}")


def lr_test(data: Dataset, family="binomial", null_formula=None,
            alt_formula=None) -> TestResult:
    """Asymptotic likelihood-ratio test with a chi-square reference.

    The statistic is twice the log-likelihood gain of the alternative fit;
    degrees of freedom are the column-count difference of the two designs.
    """
    fam = (family if not isinstance(family, str)
           else _resolve_family(data, null_formula, alt_formula, family))
    df = len(fam.alt_cols) - len(fam.null_cols)
    if df == 0:
        raise ParameterError("identical models: the LR test needs df >= 1")
    fit0 = fit_mle(fam, data, "null")
    fit1 = fit_mle(fam, data, "alt")
    stat = max(2.0 * (fit1.loglik - fit0.loglik), 0.0)
    p = float(chi2.sf(stat, df))
    return TestResult(statistic=float(stat), df=df, p_value=p, method="lr",
                      meta={"converged": fit0.converged and fit1.converged})


def pearson_gof(data: Dataset, family="binomial", formula=None) -> TestResult:
    """Pearson chi-square comparing observed and fitted outcome counts.

    Cells are (covariate class x outcome value); cells with expected count
    below 1e-8 are merged into the neighbouring outcome cell of the same
    class.  Degrees of freedom are cells - 1 - fitted parameters, floored
    at one.
    """
    if isinstance(family, str):
        if family != "binomial":
            raise ParameterError("the Pearson test applies to binomial data")
        fam = _resolve_family(data, formula, formula, family)
    else:
        fam = family
    fit = fit_mle(fam, data, "null")
    from scipy.special import expit

    eta = fam.design(data, "null") @ fit.theta_hat.values
    pi = expit(eta)
    t = fam.trials
    labels = data.class_labels
    stat = 0.0
    cells = 0
    merged = 0
    y = np.asarray(data.y)
    for c in np.unique(labels):
        m = labels == c
        n_c = int(m.sum())
        p_c = float(pi[m][0])
        pmf = np.array([
            math.comb(t, v) * p_c**v * (1 - p_c) ** (t - v)
            for v in range(t + 1)
        ])
        expected = n_c * pmf
        observed = np.bincount(y[m], minlength=t + 1).astype(float)
        # Merge vanishing expected cells into their neighbour.
        exp_m, obs_m = [], []
        for v in range(t + 1):
            if expected[v] < 1e-8 and exp_m:
                exp_m[-1] += expected[v]
                obs_m[-1] += observed[v]
                merged += 1
            elif expected[v] < 1e-8:
                expected[v + 1] += expected[v]
                observed[v + 1] += observed[v]
                merged += 1
            else:
                exp_m.append(expected[v])
                obs_m.append(observed[v])
        for e, o in zip(exp_m, obs_m):
            if e > 0:
                stat += (o - e) ** 2 / e
                cells += 1
    df = max(cells - 1 - len(fam.null_cols), 1)
    p = float(chi2.sf(stat, df))
    return TestResult(statistic=float(stat), df=df, p_value=p,
                      method="chisq", meta={"cells": cells, "merged": merged})


def bootstrap_test(data: Dataset, family="binomial", null_formula=None,
                   alt_formula=None, B: int = 1000, seed: int = 0) -> TestResult:
    """Parametric bootstrap of the LR statistic under the fitted null.

    ``p = (1 + #{boot >= observed}) / (B + 1)``; the add-one rule mirrors the
    engine's inclusive tie handling and never returns zero.
    """
    if B < 100:
        raise ParameterError("bootstrap requires B >= 100")
    fam = (family if not isinstance(family, str)
           else _resolve_family(data, null_formula, alt_formula, family))
    if not isinstance(fam, BinomialLogisticFamily):
        raise ParameterError("bootstrap_test currently supports binomial data")
    fit0 = fit_mle(fam, data, "null")
    fit1 = fit_mle(fam, data, "alt")
    obs = max(2.0 * (fit1.loglik - fit0.loglik), 0.0)
    Y = sample_outcomes(fam, fit0.theta_hat, data, seed, B, which="null")
    X0 = fam.design(data, "null")
    X1 = fam.design(data, "alt")
    _, ll0, conv0, _ = _batch_irls(X0, Y, fam.trials)
    _, ll1, conv1, _ = _batch_irls(X1, Y, fam.trials)
    boot = np.maximum(2.0 * (ll1 - ll0), 0.0)
    p = (1.0 + int((boot >= obs).sum())) / (B + 1.0)
    nonconv = int((~(conv0 & conv1)).sum())
    meta = {"B": B, "seed": seed, "nonconverged": nonconv}
    if nonconv > 0.05 * B:
        meta["warning"] = "more than 5% of bootstrap fits were clamped"
    return TestResult(statistic=float(obs),
                      df=len(fam.alt_cols) - len(fam.null_cols),
                      p_value=float(p), method="boot", meta=meta)


# --------------------------------------------------------------------------
# Lasso multi-split
# --------------------------------------------------------------------------


def default_split_penalty(n: int, p: int) -> float:
    """Default selection penalty sqrt(N + p)/10 on the sum-scale objective."""
    return math.sqrt(n + p) / 10.0


def _wald_p_values(Xs: np.ndarray, y: np.ndarray, family: str) -> np.ndarray:
    """Classical per-coefficient p-values on the estimation half."""
    n, k = Xs.shape
    Xd = np.column_stack([np.ones(n), Xs])
    if family == "gaussian":
        beta, *_ = np.linalg.lstsq(Xd, y, rcond=None)
        resid = y - Xd @ beta
        df = n - k - 1
        if df <= 0:
            raise DataError("estimation half too small for the selected set")
        sigma2 = float(resid @ resid) / df
        cov = sigma2 * np.linalg.pinv(Xd.T @ Xd)
        se = np.sqrt(np.diag(cov))[1:]
        tvals = beta[1:] / se
        return 2.0 * t_dist.sf(np.abs(tvals), df)
    fam = BinomialLogisticFamily(null_cols=tuple(range(k + 1)),
                                 alt_cols=tuple(range(k + 1)), trials=1)
    ds = Dataset(y=y.astype(np.int64), X=Xd,
                 columns=tuple(f"c{i}" for i in range(k + 1)), trials=1)
    fit = fit_mle(fam, ds, "alt")
    from scipy.special import expit
    from scipy.stats import norm

    pi = expit(Xd @ fit.theta_hat.values)
    W = np.maximum(pi * (1 - pi), 1e-8)
    cov = np.linalg.pinv(Xd.T @ (Xd * W[:, None]))
    se = np.sqrt(np.diag(cov))[1:]
    z = fit.theta_hat.values[1:] / se
    return 2.0 * norm.sf(np.abs(z))


def lasso_multi_split(X, y, spec: PenaltySpec | None = None,
                      n_splits: int = 50, lambda_fixed: float | None = None,
                      seed: int = 0, family: str = "gaussian") -> TestResult:
    """Global test by sample splitting: select on one half, test on the other.

    Per split, a lasso at a fixed penalty selects variables on half A; the
    selected set gets classical p-values from an unpenalised fit on half B,
    Bonferroni-multiplied by the set size (an empty set scores one).  Split
    p-values are aggregated by the adaptive quantile rule over
    gamma in [0.05, 1] with the (1 - log 0.05) correction, capped at one.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < 20 or n % 2 != 0:
        raise DataError("multi-split requires an even N of at least 20")
    if n_splits < 1:
        raise ParameterError("n_splits must be at least 1")
    lam_sum_scale = (default_split_penalty(n, p)
                     if lambda_fixed is None else float(lambda_fixed))
    half = n // 2
    alpha_mix = 1.0 if spec is None else spec.alpha_mix
    split_p = np.empty(n_splits)
    selected_sizes = np.empty(n_splits, dtype=int)
    truncated = 0
    for b in range(n_splits):
        order = rng_for(seed, b).permutation(n)
        A, Bidx = order[:half], order[half:]
        # The fixed penalty is quoted on the unscaled (sum) objective;
        # the solver works per-observation.
        # Selection only needs the support, not high-precision coefficients.
        sel_spec = PenaltySpec(alpha_mix=alpha_mix, lam=lam_sum_scale / half,
                               family="gaussian" if family == "gaussian"
                               else "binomial-logit", tol=1e-7)
        fit = fit_elastic_net(X[A], y[A], sel_spec)
        coefs = fit.coefficients[0]
        S = np.flatnonzero(coefs != 0.0)
        cap = half - 2
        if S.size >= cap:
            S = S[np.argsort(-np.abs(coefs[S]))[:max(cap, 1)]]
            truncated += 1
        selected_sizes[b] = S.size
        if S.size == 0:
            split_p[b] = 1.0
            continue
        pvals = _wald_p_values(X[Bidx][:, S], y[Bidx], family)
        split_p[b] = min(1.0, float(pvals.min()) * S.size)
    gamma_min = 0.05
    gammas = np.linspace(gamma_min, 1.0, 20)
    q = np.array([
        min(1.0, float(np.quantile(split_p / g, g))) for g in gammas
    ])
    p_final = min(1.0, (1.0 - math.log(gamma_min)) * float(q.min()))
    meta = {
        "n_splits": n_splits,
        "lambda_sum_scale": lam_sum_scale,
        "gamma_min": gamma_min,
        "mean_selected": float(selected_sizes.mean()),
        "truncated_splits": truncated,
        "seed": seed,
    }
    return TestResult(statistic=float(np.median(split_p)), df=None,
                      p_value=float(p_final), method="lms", meta=meta)
