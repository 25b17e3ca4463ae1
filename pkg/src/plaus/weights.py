"""Dataset-ordering weight functions for the plausibility engine.

A weight maps a candidate dataset to a real number; candidates carrying
stronger evidence for the alternative model receive smaller values.  The
engine computes null cumulative probabilities of the weight at the observed
value, so exactness only needs the weight to be a fixed function of the
candidate, not any distributional assumption about it.

Weight kinds
------------
``lr``
    Log-likelihood difference between null and alternative fits, both fitted
    on the candidate itself; always <= 0 and free of the data-generating
    parameter.
``relative_lr``
    Fits estimated once on the *observed* data and then evaluated on
    candidates.  Deliberately violates the free-of-parameter condition; kept
    as the anti-conservative comparator arm.
``penalized_lr``
    Like ``lr`` on the alternative side but with a penalised fit at a penalty
    level cached from the observed data, for alternatives with p >= N.  For
    Gaussian outcomes the variance inside both terms is the candidate's
    null-model unbiased residual variance, which keeps the weight
    scale-equivariant.
``gof``
    The log-likelihood itself, re-evaluated at each parameter during the
    supremum; only legal in the engine's unweighted mode.
``fixed_statistic``
    Arbitrary user statistic of the candidate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError
from .model import (
    BinomialLogisticFamily,
    Dataset,
    GaussianLinearFamily,
    ParamVector,
    _batch_irls,
    _binom_loglik_matrix,
    fit_mle,
    log_likelihood,
)
from .penalized import (
    PenaltySpec,
    batch_enet_gaussian,
    batch_ridge_gaussian,
    cross_validate,
    fit_elastic_net,
)

KINDS = ("gof", "lr", "relative_lr", "penalized_lr", "fixed_statistic")


@dataclass(frozen=True)
class WeightSpec:
    """Declarative weight choice consumed by the engine.

    ``family`` supplies the nested null/alternative designs for the lr
    kinds.  ``penalty`` configures ``penalized_lr``; its context (the penalty
    level when chosen by cross-validation) is resolved once per observed
    dataset and held fixed across all Monte Carlo candidates.

    ``exchangeable`` declares that the statistic is invariant under row
    permutations within a covariate class.  The built-in likelihood-based
    kinds all are; user statistics must opt in.  Exchangeable weights let
    the engine canonicalise candidates so that floating point evaluation
    respects the exact tie structure.
    """

    kind: str
    family: object | None = None
    penalty: PenaltySpec | None = None
    statistic: Callable[[Dataset], float] | None = None
    exchangeable: bool | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown weight kind {self.kind!r}")
        if self.kind == "penalized_lr" and self.penalty is None:
            raise ParameterError("penalized_lr weight requires a PenaltySpec")
        if self.kind == "fixed_statistic" and self.statistic is None:
            raise ParameterError("fixed_statistic weight requires a callable")


class PreparedWeight:
    """A weight bound to its observed-data context.

    ``matrix`` evaluates many candidate outcome vectors (columns of ``Y``)
    sharing the observed design.  Identical columns inside one call produce
    identical values, and iterative fits freeze per column, so callers that
    need exact tie comparisons (the engine does) evaluate candidates and the
    observed outcome inside a single call.  Across separate calls values
    agree only to floating point roundoff.
    """

    theta_free = True
    exchangeable = True

    def matrix(self, Y: np.ndarray, template: Dataset) -> np.ndarray:
        raise NotImplementedError

    def value(self, data: Dataset) -> float:
        return float(self.matrix(np.asarray(data.y)[:, None], data)[0])


def _gaussian_nested_rss(family: GaussianLinearFamily, Y, template):
    """Null/alt residual sums of squares for every candidate column."""
    out = []
    for which in ("null", "alt"):
        Xs = family.design(template, which)
        Q, _ = np.linalg.qr(Xs)
        resid = Y - Q @ (Q.T @ Y)
        out.append(np.einsum("nm,nm->m", resid, resid))
    return out[0], out[1]


class _LRWeight(PreparedWeight):
    """w = loglik(null fit) - loglik(alt fit), both fitted on the candidate.

    For binomial outcomes the two fits run through the shared IRLS core; a
    clamped (separated) alternative fit can fall below the embedded null
    maximum, so the alternative value is floored at the null value to keep
    the nesting inequality w <= 0 exact.  Gaussian outcomes share the
    candidate's null-model unbiased residual variance between both terms,
    matching the penalised weight at zero penalty.
    """

    def __init__(self, family):
        self.family = family

    def matrix(self, Y, template):
        fam = self.family
        if isinstance(fam, BinomialLogisticFamily):
            X0 = fam.design(template, "null")
            X1 = fam.design(template, "alt")
            _, ll0, _, _ = _batch_irls(X0, Y, fam.trials)
            _, ll1, _, _ = _batch_irls(X1, Y, fam.trials)
            return ll0 - np.maximum(ll1, ll0)
        rss0, rss1 = _gaussian_nested_rss(fam, np.asarray(Y, dtype=float), template)
        df0 = template.n - len(fam.null_cols)
        if df0 <= 0:
            raise ParameterError("null design leaves no residual degrees of freedom")
        sigma2 = rss0 / df0
        rss1 = np.minimum(rss1, rss0)
        return (rss1 - rss0) / (2.0 * sigma2)


class _RelativeLRWeight(PreparedWeight):
    """LR weight with both fits frozen at the observed data's estimates."""

    theta_free = False

    def __init__(self, family, observed: Dataset):
        self.family = family
        self.fit0 = fit_mle(family, observed, "null")
        self.fit1 = fit_mle(family, observed, "alt")

    def matrix(self, Y, template):
        fam = self.family
        if isinstance(fam, BinomialLogisticFamily):
            eta0 = fam.design(template, "null") @ self.fit0.theta_hat.values
            eta1 = fam.design(template, "alt") @ self.fit1.theta_hat.values
            ll0 = _binom_loglik_matrix(eta0, Y, fam.trials)
            ll1 = _binom_loglik_matrix(eta1, Y, fam.trials)
            return ll0 - ll1
        Y = np.asarray(Y, dtype=float)
        out = np.empty(Y.shape[1])
        for j in range(Y.shape[1]):
            cand = template.with_y(Y[:, j])
            out[j] = log_likelihood(fam, self.fit0.theta_hat, cand, "null") - \
                log_likelihood(fam, self.fit1.theta_hat, cand, "alt")
        return out


class _PenalizedLRWeight(PreparedWeight):
    """Penalised model-comparison weight at a cached penalty level.

    The penalty is resolved once from the observed data (cross-validation or
    a fixed value) and reused for every candidate, so the weight stays a
    fixed function of the candidate.  Nuisance columns are projected out of
    both the response and the penalised columns first; at zero penalty this
    reproduces the ordinary least-squares alternative fit exactly.
    """

    def __init__(self, family, penalty: PenaltySpec, observed: Dataset):
        self.family = family
        self.penalty = penalty
        binomial = isinstance(family, BinomialLogisticFamily)
        if binomial and observed.trials != 1:
            raise ParameterError(
                "binomial penalized_lr weights support binary outcomes only"
            )
        X0 = family.design(observed, "null")
        alt_only = tuple(c for c in family.alt_cols if c not in family.null_cols)
        self.pen_cols = alt_only
        Xa = observed.X[:, alt_only]
        Q, _ = np.linalg.qr(X0) if X0.shape[1] else (np.zeros((observed.n, 0)), None)
        self._Q0 = Q
        self._Xa_res = Xa - Q @ (Q.T @ Xa) if Q.shape[1] else Xa
        if isinstance(penalty.lam, str):
            if penalty.lam != "cv":
                raise ParameterError(
                    "penalized_lr needs a fixed penalty or 'cv', not a path"
                )
            if binomial:
                self.lam = cross_validate(Xa, np.asarray(observed.y, float),
                                          penalty)
            else:
                ya = observed.y - Q @ (Q.T @ observed.y) if Q.shape[1] else observed.y
                self.lam = cross_validate(self._Xa_res, np.asarray(ya, float),
                                          penalty)
        else:
            self.lam = float(penalty.lam)

    def matrix(self, Y, template):
        fam = self.family
        Y = np.asarray(Y, dtype=float)
        if isinstance(fam, GaussianLinearFamily):
            Q = self._Q0
            Yr = Y - Q @ (Q.T @ Y) if Q.shape[1] else Y
            d0 = len(fam.null_cols)
            df0 = template.n - d0
            rss0 = np.einsum("nm,nm->m", Yr, Yr)
            if self.penalty.alpha_mix == 0.0:
                coefs, icepts = batch_ridge_gaussian(
                    self._Xa_res, Yr, self.lam, self.penalty.standardize
                )
            else:
                coefs, icepts = batch_enet_gaussian(
                    self._Xa_res, Yr, self.lam, self.penalty.alpha_mix,
                    self.penalty.standardize,
                )
            fitted = self._Xa_res @ coefs.T + icepts[None, :]
            resid = Yr - fitted
            rss1 = np.einsum("nm,nm->m", resid, resid)
            sigma2 = rss0 / df0
            if np.any(sigma2 <= 0):
                raise ParameterError("degenerate candidate: zero null variance")
            rss1 = np.minimum(rss1, rss0)
            return (rss1 - rss0) / (2.0 * sigma2)
        # Binomial-logit: intercept-only null, penalised logistic alternative.
        if len(fam.null_cols) > 1:
            raise ParameterError(
                "binomial penalized_lr supports intercept-only null designs"
            )
        Xa = template.X[:, self.pen_cols]
        out = np.empty(Y.shape[1])
        spec = PenaltySpec(
            alpha_mix=self.penalty.alpha_mix, lam=self.lam,
            standardize=self.penalty.standardize, family="binomial-logit",
        )
        for j in range(Y.shape[1]):
            y = Y[:, j]
            ybar = np.clip(y.mean(), 1e-12, 1 - 1e-12)
            eta0 = np.log(ybar / (1 - ybar))
            ll0 = float(np.sum(y * eta0 - np.logaddexp(0.0, eta0)))
            fit = fit_elastic_net(Xa, y, spec)
            eta1 = fit.intercepts[0] + Xa @ fit.coefficients[0]
            ll1 = float(np.sum(y * eta1 - np.logaddexp(0.0, eta1)))
            out[j] = ll0 - max(ll1, ll0)
        return out


class _FixedStatisticWeight(PreparedWeight):
    exchangeable = False

    def __init__(self, statistic, exchangeable=None):
        self.statistic = statistic
        if exchangeable is not None:
            self.exchangeable = bool(exchangeable)

    def matrix(self, Y, template):
        Y = np.asarray(Y)
        return np.array(
            [float(self.statistic(template.with_y(Y[:, j])))
             for j in range(Y.shape[1])]
        )


def prepare_weight(spec: WeightSpec, observed: Dataset) -> PreparedWeight:
    """Bind a weight spec to its observed-data context."""
    if spec.kind in ("lr", "relative_lr", "penalized_lr") and spec.family is None:
        raise ParameterError(f"{spec.kind} weight requires a family")
    if spec.kind == "lr":
        return _LRWeight(spec.family)
    if spec.kind == "relative_lr":
        return _RelativeLRWeight(spec.family, observed)
    if spec.kind == "penalized_lr":
        return _PenalizedLRWeight(spec.family, spec.penalty, observed)
    if spec.kind == "fixed_statistic":
        return _FixedStatisticWeight(spec.statistic, spec.exchangeable)
    raise ParameterError(
        "gof weights have no fixed ordering; use the engine's unweighted mode"
    )


# --------------------------------------------------------------------------
# Direct functional forms
# --------------------------------------------------------------------------


def lr_weight(spec: WeightSpec, candidate: Dataset) -> float:
    """Nested log-likelihood difference fitted on the candidate (<= 0)."""
    if spec.kind != "lr":
        raise ParameterError("lr_weight requires a spec of kind 'lr'")
    return _LRWeight(spec.family).value(candidate)


def relative_lr_weight(spec: WeightSpec, observed: Dataset,
                       candidate: Dataset) -> float:
    """LR weight with parameters estimated once from the observed data."""
    if spec.kind != "relative_lr":
        raise ParameterError("relative_lr_weight requires kind 'relative_lr'")
    return _RelativeLRWeight(spec.family, observed).value(candidate)


def penalized_lr_weight(spec: WeightSpec, candidate: Dataset,
                        observed: Dataset | None = None) -> float:
    """Penalised LR weight; penalty context cached from ``observed``.

    When ``observed`` is omitted the context is resolved on the candidate
    itself (matching single-dataset use).
    """
    if spec.kind != "penalized_lr":
        raise ParameterError("penalized_lr_weight requires kind 'penalized_lr'")
    return _PenalizedLRWeight(spec.family, spec.penalty,
                              observed or candidate).value(candidate)


def gof_weight(theta: ParamVector, candidate: Dataset, family,
               which: str = "alt") -> float:
    """Goodness-of-fit ordering: the log-likelihood at ``theta`` itself."""
    return log_likelihood(family, theta, candidate, which)
