"""Parametric likelihood families: binomial-logistic and Gaussian linear.

All likelihood values in this package are natural-log likelihoods (larger is
better).  Code that reasons in terms of a loss uses the mapping
``loss = -loglik``; the sign convention is fixed here, once.

The binomial family models per-observation counts ``y_i`` out of a fixed
number of trials (default 2) with a logistic regression on the success
probability, optionally corrected for family ascertainment (at least one
affected member per family).  The Gaussian family is a fixed-design linear
model with either a known variance or the unbiased residual estimate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, gammaln

from .errors import DataError, DesignError, NumericDomainError, ParameterError
from .seeding import rng_for

INTERCEPT = "(Intercept)"

#: CSV columns with fixed semantics; never expanded into covariates.
RESERVED_COLUMNS = ("y", "trials", "family", "poo")

# Coefficients beyond this magnitude on the log-odds scale indicate
# separation; fits are clamped here and reported as non-converged.
COEF_CLAMP = 15.0

_IRLS_MAX_ITER = 50
_IRLS_TOL = 1e-9  # on the deviance change


# --------------------------------------------------------------------------
# Core data containers
# --------------------------------------------------------------------------


def _frozen_array(values, dtype=None) -> np.ndarray:
    out = np.array(values, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Immutable observations plus the full design matrix.

    ``X`` holds every column any model under consideration may use; model
    formulas select column subsets.  ``class_labels`` partition observations
    into covariate classes: two observations share a label exactly when their
    design rows are identical.  ``terms`` maps user-facing term names (for
    example ``"fid"``) to the indices of their design columns.
    """

    y: np.ndarray
    X: np.ndarray
    columns: tuple[str, ...]
    trials: int = 2
    class_labels: np.ndarray | None = None
    meta: Mapping[str, np.ndarray] = field(default_factory=dict)
    terms: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        y = _frozen_array(self.y)
        X = _frozen_array(np.atleast_2d(self.X), dtype=float)
        if X.shape[0] != y.shape[0]:
            raise DataError(
                f"y has {y.shape[0]} rows but X has {X.shape[0]}"
            )
        if len(self.columns) != X.shape[1]:
            raise DataError("column names do not match design width")
        if np.issubdtype(y.dtype, np.integer):
            if y.min(initial=0) < 0 or y.max(initial=0) > self.trials:
                raise DataError(
                    f"binomial outcomes must lie in [0, {self.trials}]"
                )
        labels = self.class_labels
        if labels is None:
            _, labels = np.unique(X, axis=0, return_inverse=True)
        labels = _frozen_array(labels, dtype=np.int64)
        meta = {k: _frozen_array(v) for k, v in dict(self.meta).items()}
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "class_labels", labels)
        object.__setattr__(self, "meta", meta)
        object.__setattr__(
            self, "terms", {k: tuple(v) for k, v in dict(self.terms).items()}
        )

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def with_y(self, y) -> "Dataset":
        """Same design, new outcomes (used for sampled candidates)."""
        return replace(self, y=y, class_labels=self.class_labels)

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask, dtype=bool)
        return Dataset(
            y=self.y[mask],
            X=self.X[mask],
            columns=self.columns,
            trials=self.trials,
            meta={k: v[mask] for k, v in self.meta.items()},
            terms=dict(self.terms),
        )

    def column_indices(self, names: Sequence[str]) -> tuple[int, ...]:
        lookup = {name: i for i, name in enumerate(self.columns)}
        try:
            return tuple(lookup[n] for n in names)
        except KeyError as exc:
            raise DataError(
                f"unknown design column {exc.args[0]!r}; "
                f"available: {', '.join(self.columns)}"
            ) from None


@dataclass(frozen=True)
class ParamVector:
    """Coefficient vector with an optional interest/nuisance partition."""

    values: np.ndarray
    psi_index: tuple[int, ...] = ()
    lambda_index: tuple[int, ...] = ()
    sigma2: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, float))
        psi, lam = tuple(self.psi_index), tuple(self.lambda_index)
        if psi or lam:
            if set(psi) & set(lam):
                raise ParameterError("psi and lambda indices overlap")
            if set(psi) | set(lam) != set(range(self.values.size)):
                raise ParameterError(
                    "psi and lambda indices must cover all coefficients"
                )
        object.__setattr__(self, "psi_index", psi)
        object.__setattr__(self, "lambda_index", lam)

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class FitResult:
    theta_hat: ParamVector
    loglik: float
    converged: bool
    iterations: int


class _NestedDesign:
    """Shared column-selection behaviour for families with nested designs."""

    def cols(self, which: str) -> tuple[int, ...]:
        if which == "null":
            return self.null_cols
        if which == "alt":
            return self.alt_cols
        raise ValueError("which must be 'null' or 'alt'")

    def design(self, data: Dataset, which: str = "alt") -> np.ndarray:
        return data.X[:, self.cols(which)]

    def _validate_nesting(self):
        object.__setattr__(self, "null_cols", tuple(self.null_cols))
        object.__setattr__(self, "alt_cols", tuple(self.alt_cols))
        if not set(self.null_cols) <= set(self.alt_cols):
            raise DesignError("null design must be nested in the alternative")


@dataclass(frozen=True)
class BinomialLogisticFamily(_NestedDesign):
    """Binomial counts with a logit link on the success probability.

    ``null_cols``/``alt_cols`` are index tuples into ``Dataset.X`` defining
    the two nested designs being compared.  When ``ascertainment`` is set the
    likelihood subtracts, per family group, the log probability that at least
    one member is affected.
    """

    null_cols: tuple[int, ...]
    alt_cols: tuple[int, ...]
    trials: int = 2
    ascertainment: bool = False
    family_key: str = "family"

    def __post_init__(self):
        self._validate_nesting()


@dataclass(frozen=True)
class GaussianLinearFamily(_NestedDesign):
    """Fixed-design linear model with iid normal errors.

    ``variance_mode`` is ``"known"`` (``sigma2`` required) or
    ``"profiled-unbiased"`` (variance replaced by the unbiased residual
    estimate of the fitted design).
    """

    null_cols: tuple[int, ...]
    alt_cols: tuple[int, ...]
    variance_mode: str = "profiled-unbiased"
    sigma2: float | None = None

    def __post_init__(self):
        self._validate_nesting()
        if self.variance_mode not in ("known", "profiled-unbiased"):
            raise ParameterError(f"unknown variance_mode {self.variance_mode!r}")
        if self.variance_mode == "known":
            if self.sigma2 is None or self.sigma2 <= 0:
                raise ParameterError("known variance_mode requires sigma2 > 0")


# --------------------------------------------------------------------------
# Binomial likelihood internals (vectorised over candidate outcome matrices)
# --------------------------------------------------------------------------


def _log_binom_coef(y: np.ndarray, trials: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return (
        gammaln(trials + 1.0) - gammaln(y + 1.0) - gammaln(trials - y + 1.0)
    )


def _binom_loglik_matrix(eta: np.ndarray, Y: np.ndarray, trials: int) -> np.ndarray:
    """Column-wise binomial log-likelihoods.

    ``eta`` is the linear predictor, shared ((n,)) or per candidate ((n, m));
    ``Y`` is an (n, m) outcome matrix.  Returns an (m,) vector.
    """
    Y = np.asarray(Y, dtype=float)
    if eta.ndim == 1:
        eta = eta[:, None]
    softplus = np.logaddexp(0.0, eta)
    terms = _log_binom_coef(Y, trials) + Y * eta - trials * softplus
    return terms.sum(axis=0)


def _check_rank(X: np.ndarray, columns: Sequence[str] | None = None) -> None:
    if X.shape[1] == 0:
        raise DesignError("design has no columns")
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        # Identify dependent columns through pivoted QR.
        from scipy.linalg import qr

        _, _, piv = qr(X, mode="economic", pivoting=True)
        bad = sorted(piv[rank:])
        names = (
            [columns[j] for j in bad] if columns is not None else [str(j) for j in bad]
        )
        raise DesignError(
            f"design is rank deficient (rank {rank} < {X.shape[1]}); "
            f"dependent columns: {', '.join(names)}"
        )


def _batch_irls(
    X: np.ndarray,
    Y: np.ndarray,
    trials: int,
    max_iter: int = _IRLS_MAX_ITER,
    tol: float = _IRLS_TOL,
):
    """Fit binomial-logit models to every column of ``Y`` on a shared design.

    Returns ``(beta, loglik, converged, iterations)`` where ``beta`` is
    (p, m).  Deviance convergence follows the usual iteratively reweighted
    least squares recipe; separated columns are clamped to ``COEF_CLAMP`` on
    the log-odds scale and flagged non-converged instead of failing, because
    small-sample null resamples separate routinely.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, p = X.shape
    m = Y.shape[1]
    beta = np.zeros((p, m))
    ll = _binom_loglik_matrix(np.zeros(n), Y, trials)
    eye = np.eye(p)
    iterations = 0
    conv = np.zeros(m, dtype=bool)
    # Converged columns are frozen so that a column's trajectory never
    # depends on what else sits in the batch; batched results are therefore
    # bitwise identical to one-at-a-time fits, which keeps weight ties exact.
    active = np.arange(m)
    for iterations in range(1, max_iter + 1):
        Ya = Y[:, active]
        ba = beta[:, active]
        eta = np.einsum("np,pm->nm", X, ba)
        np.clip(eta, -30.0, 30.0, out=eta)
        pi = expit(eta)
        mu = trials * pi
        W = np.maximum(trials * pi * (1.0 - pi), 1e-10)
        z = eta + (Ya - mu) / W
        A = np.einsum("np,nm,nq->mpq", X, W, X) + 1e-10 * eye
        b = np.einsum("np,nm->mp", X, W * z)
        ba = np.linalg.solve(A, b[:, :, None])[:, :, 0].T
        eta = np.einsum("np,pm->nm", X, ba)
        np.clip(eta, -30.0, 30.0, out=eta)
        ll_new = _binom_loglik_matrix(eta, Ya, trials)
        done = np.abs(2.0 * (ll_new - ll[active])) < tol
        beta[:, active] = ba
        ll[active] = ll_new
        conv[active] = done
        active = active[~done]
        if active.size == 0:
            break
    separated = np.abs(beta).max(axis=0) > COEF_CLAMP
    if separated.any():
        beta = beta.copy()
        beta[:, separated] = np.clip(beta[:, separated], -COEF_CLAMP, COEF_CLAMP)
        eta = np.einsum("np,pm->nm", X, beta[:, separated])
        ll = ll.copy()
        ll[separated] = _binom_loglik_matrix(eta, Y[:, separated], trials)
        conv = conv & ~separated
    return beta, ll, conv, iterations


def _gaussian_sigma2(theta: ParamVector, family: GaussianLinearFamily,
                     resid: np.ndarray, df: int) -> float:
    if theta.sigma2 is not None:
        return float(theta.sigma2)
    if family.variance_mode == "known":
        return float(family.sigma2)
    if df <= 0:
        raise NumericDomainError("no residual degrees of freedom for variance")
    return float(resid @ resid / df)


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------


def log_likelihood(family, theta: ParamVector, data: Dataset,
                   which: str = "alt") -> float:
    """Natural-log likelihood of ``data`` at ``theta`` under ``family``.

    For the binomial family with ascertainment enabled, the per-family
    log probability of observing at least one affected member is subtracted.
    """
    Xs = family.design(data, which)
    if theta.dim != Xs.shape[1]:
        raise ParameterError(
            f"theta has {theta.dim} coefficients, design has {Xs.shape[1]} columns"
        )
    if isinstance(family, BinomialLogisticFamily):
        eta = Xs @ theta.values
        ll = float(_binom_loglik_matrix(eta, data.y[:, None], family.trials)[0])
        if family.ascertainment:
            ll -= ascertainment_logprob(family, theta, data, which=which)
        return ll
    if isinstance(family, GaussianLinearFamily):
        resid = data.y - Xs @ theta.values
        sigma2 = _gaussian_sigma2(family=family, theta=theta, resid=resid,
                                  df=data.n - Xs.shape[1])
        n = data.n
        return float(
            -0.5 * n * math.log(2.0 * math.pi * sigma2)
            - 0.5 * (resid @ resid) / sigma2
        )
    raise ParameterError(f"unsupported family {type(family).__name__}")


def fit_mle(family, data: Dataset, which: str = "alt") -> FitResult:
    """Maximum-likelihood fit of the selected design.

    Binomial-logit models are fitted by iteratively reweighted least squares;
    Gaussian models by ordinary least squares with the unbiased variance
    estimate when ``variance_mode`` is ``"profiled-unbiased"``.
    """
    Xs = family.design(data, which)
    names = [data.columns[j] for j in family.cols(which)]
    _check_rank(Xs, names)
    if isinstance(family, BinomialLogisticFamily):
        beta, ll, conv, iters = _batch_irls(Xs, data.y[:, None], family.trials)
        theta = ParamVector(values=beta[:, 0])
        ll_val = float(ll[0])
        if family.ascertainment:
            # The correction term shifts the optimum; refine from the
            # uncorrected IRLS solution.
            from scipy.optimize import minimize

            def neg(values):
                try:
                    return -log_likelihood(
                        family, ParamVector(values=values), data, which
                    )
                except NumericDomainError:
                    return np.inf

            res = minimize(neg, beta[:, 0], method="Nelder-Mead",
                           options={"maxfev": 2000, "xatol": 1e-8,
                                    "fatol": 1e-10})
            theta = ParamVector(values=np.clip(res.x, -COEF_CLAMP, COEF_CLAMP))
            ll_val = float(-neg(theta.values))
            conv = np.array([res.success and bool(conv[0])])
            iters = iters + int(res.nfev)
        return FitResult(theta, ll_val, bool(conv[0]), iters)
    if isinstance(family, GaussianLinearFamily):
        beta, *_ = np.linalg.lstsq(Xs, data.y, rcond=None)
        resid = data.y - Xs @ beta
        df = data.n - Xs.shape[1]
        if family.variance_mode == "known":
            sigma2 = float(family.sigma2)
        else:
            if df <= 0:
                raise NumericDomainError(
                    "cannot profile the variance with no residual degrees of freedom"
                )
            sigma2 = float(resid @ resid / df)
        theta = ParamVector(values=beta, sigma2=sigma2)
        return FitResult(theta, log_likelihood(family, theta, data, which), True, 1)
    raise ParameterError(f"unsupported family {type(family).__name__}")


def sample(family, theta: ParamVector, template: Dataset, seed: int,
           which: str = "alt") -> Dataset:
    """Draw one dataset from ``family`` at ``theta`` on the template design."""
    Y = sample_outcomes(family, theta, template, seed, size=1, which=which)[:, 0]
    if isinstance(family, BinomialLogisticFamily):
        Y = Y.astype(np.int64)
    return template.with_y(Y)


def sample_outcomes(family, theta: ParamVector, template: Dataset, seed: int,
                    size: int, which: str = "alt") -> np.ndarray:
    """Draw ``size`` independent outcome vectors as an (n, size) matrix.

    A single vectorised draw keyed on ``seed`` keeps results identical no
    matter how callers schedule surrounding work.
    """
    Xs = family.design(template, which)
    if theta.dim != Xs.shape[1]:
        raise ParameterError(
            f"theta has {theta.dim} coefficients, design has {Xs.shape[1]} columns"
        )
    rng = rng_for(seed)
    n = template.n
    if isinstance(family, BinomialLogisticFamily):
        pi = expit(Xs @ theta.values)
        return rng.binomial(
            family.trials, np.broadcast_to(pi[:, None], (n, size))
        ).astype(np.int64)
    if isinstance(family, GaussianLinearFamily):
        mean = Xs @ theta.values
        resid = template.y - mean
        sigma2 = _gaussian_sigma2(theta=theta, family=family, resid=resid,
                                  df=n - Xs.shape[1])
        z = rng.standard_normal((n, size))
        return mean[:, None] + math.sqrt(sigma2) * z
    raise ParameterError(f"unsupported family {type(family).__name__}")


def ascertainment_logprob(family: BinomialLogisticFamily, theta: ParamVector,
                          data: Dataset, which: str = "alt") -> float:
    """Sum over family groups of log P(at least one affected member).

    Computed as ``log1p(-exp(s))`` with ``s`` the group log probability of
    all members being unaffected, which stays accurate when the group
    probability is close to one.  A member with success probability one
    drives ``s`` to ``-inf`` and the group term to exactly zero.
    """
    if family.family_key not in data.meta:
        raise DataError(
            f"ascertainment grouping column {family.family_key!r} missing from meta"
        )
    groups = np.asarray(data.meta[family.family_key])
    eta = family.design(data, which) @ theta.values
    # log P(Y_i = 0) = trials * log(1 - pi) = -trials * softplus(eta)
    log_zero = -family.trials * np.logaddexp(0.0, eta)
    total = 0.0
    for g in np.unique(groups):
        s = float(log_zero[groups == g].sum())
        if s >= 0.0:
            raise NumericDomainError(
                f"ascertainment probability underflows to 0 for family group {g!r}"
            )
        total += math.log1p(-math.exp(s)) if s > -745.0 else 0.0
    return total


def knudson_estimates(n_none: int, n_uni: int, n_bi: int):
    """Closed-form two-eye model estimates from (none, unilateral, bilateral).

    Returns ``(p_hat, lambda_hat, lambda_i_hat, eye_distribution)`` where
    ``lambda_hat`` is the mean tumour count per eye, ``lambda_i_hat`` the
    per-individual reparametrisation (twice the per-eye rate), and
    ``eye_distribution`` the implied (none, unilateral, bilateral) split.
    """
    counts = (int(n_none), int(n_uni), int(n_bi))
    if any(c < 0 for c in counts):
        raise DataError("counts must be non-negative")
    total = sum(counts)
    if total < 1:
        raise DataError("at least one individual required")
    p_hat = (counts[1] + 2 * counts[2]) / (2 * total)
    lam = math.inf if p_hat >= 1.0 else -math.log1p(-p_hat)
    dist = ((1 - p_hat) ** 2, 2 * p_hat * (1 - p_hat), p_hat**2)
    return p_hat, lam, 2 * lam, dist


def eye_distribution_from_rate(lambda_i: float):
    """(none, unilateral, bilateral) probabilities at per-individual rate."""
    p = -math.expm1(-lambda_i / 2.0)
    return (1 - p) ** 2, 2 * p * (1 - p), p**2


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def read_table(path) -> dict[str, list[str]]:
    """Read a CSV file with a header row into column lists of strings."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        cols: dict[str, list[str]] = {name.strip(): [] for name in header}
        names = list(cols)
        if len(names) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        for row in reader:
            if not row:
                continue
            if len(row) != len(names):
                raise DataError(f"{path}: ragged row {row!r}")
            for name, value in zip(names, row):
                cols[name].append(value.strip())
    return cols


def build_dataset(table: Mapping[str, Sequence[str]], outcome: str = "y",
                  trials_default: int = 2, numeric_outcome: bool = False) -> Dataset:
    """Assemble a ``Dataset`` from a parsed CSV table.

    Reserved columns (``y``, ``trials``, ``family``, ``poo``) keep their
    designated roles.  Remaining columns become covariates: numeric columns
    enter as-is, non-numeric columns are expanded to treatment-coded
    indicators with the lexicographically first level as the reference.
    An intercept column is always placed first.
    """
    if outcome not in table:
        raise DataError(f"outcome column {outcome!r} missing")
    n = len(table[outcome])
    if n == 0:
        raise DataError("no data rows")
    if numeric_outcome:
        y = np.array([float(v) for v in table[outcome]])
    else:
        try:
            y = np.array([int(v) for v in table[outcome]], dtype=np.int64)
        except ValueError:
            y = np.array([float(v) for v in table[outcome]])
    trials = trials_default
    if "trials" in table:
        t_vals = {int(v) for v in table["trials"]}
        if len(t_vals) != 1:
            raise DataError("trials must be constant per dataset")
        trials = t_vals.pop()

    columns = [INTERCEPT]
    design_cols = [np.ones(n)]
    terms: dict[str, tuple[int, ...]] = {"1": (0,)}
    meta: dict[str, np.ndarray] = {}

    for name, values in table.items():
        if name == outcome or name == "trials":
            continue
        numeric = all(_is_float(v) for v in values)
        if name in ("family",):
            meta[name] = np.array(values)
            continue
        if numeric:
            col = np.array([float(v) for v in values])
            terms[name] = (len(columns),)
            columns.append(name)
            design_cols.append(col)
            if name == "poo":
                meta[name] = col
        else:
            levels = sorted(set(values))
            idx = []
            for level in levels[1:]:
                idx.append(len(columns))
                columns.append(f"{name}:{level}")
                design_cols.append(
                    np.array([1.0 if v == level else 0.0 for v in values])
                )
            terms[name] = tuple(idx)
            meta[name] = np.array(values)

    X = np.column_stack(design_cols)
    return Dataset(y=y, X=X, columns=tuple(columns), trials=trials,
                   meta=meta, terms=terms)


def read_dataset_csv(path, trials_default: int = 2,
                     numeric_outcome: bool = False) -> Dataset:
    return build_dataset(read_table(path), trials_default=trials_default,
                         numeric_outcome=numeric_outcome)
