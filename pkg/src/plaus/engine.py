"""Plausibility functions: exact and Monte Carlo weighted null CDFs.

The p-value of a weighted plausibility test is

    sup over theta in the null set of  P_theta( w(Y) <= w(observed) )

where ``w`` orders candidate datasets (smaller = stronger evidence for the
alternative) and candidates are drawn from the family at ``theta``.  The
unweighted (goodness-of-fit) mode orders candidates by their own likelihood
at the evaluated ``theta`` instead of by a fixed statistic.

Backends
--------
``exact``
    Enumerates, per covariate class, every outcome count table (composition
    of the class size into trials + 1 cells) and sums multinomial
    probabilities of the cross-class tables whose weight does not exceed the
    observed one.  Exact to floating point.
``importance``
    Draws one base sample from a proposal parameter (the null fit) and
    reweights it by likelihood ratios when the supremum search moves to other
    parameters, so that function variation is not swamped by fresh sampling
    noise.
``mc``
    Plain Monte Carlo with fresh draws at each evaluated point; only
    supported for point and explicit-grid null sets.

Tie rule: estimators are inclusive, ``(1 + #{w(Y_j) <= w(obs)}) / (M + 1)``
at the proposal parameter, which is conservative and never returns zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, gammaln
from scipy.stats import chi2

from .errors import (
    EnumerationCapError,
    NumericDomainError,
    ParameterError,
)
from .model import (
    BinomialLogisticFamily,
    Dataset,
    GaussianLinearFamily,
    ParamVector,
    _batch_irls,
    _log_binom_coef,
    fit_mle,
    log_likelihood,
    sample_outcomes,
)
from .seeding import rng_for
from .weights import PreparedWeight, WeightSpec, prepare_weight

_GRID_POINTS = 7
_GRID_SPAN = 3.0       # in standard errors around the centre
_GRID_BUDGET = 2401    # largest grid we will materialise
_NM_MAXFEV = 200
_NM_FATOL = 1e-4       # on the CDF value
_SE_CLIP = (0.25, 5.0)
_PROFILE_SPAN = 4.0   # nuisance-grid extent for profile suprema, in SEs
_MATERIALIZE_CAP = 4_000_000
_CHUNK = 250_000


# --------------------------------------------------------------------------
# Configuration and result containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class IntegrationSettings:
    """Monte Carlo configuration shared by the stochastic backends."""

    M: int = 10_000
    seed: int = 0
    backend: str = "importance"       # exact | mc | importance
    reuse_base_theta: bool = True
    enumeration_cap: float = 1e8

    def __post_init__(self):
        if self.backend not in ("exact", "mc", "importance"):
            raise ParameterError(f"unknown backend {self.backend!r}")
        if self.backend != "exact" and self.M < 100:
            raise ParameterError("Monte Carlo backends require M >= 100")


@dataclass(frozen=True)
class PointNull:
    """A single null parameter (coefficients of the null design)."""

    theta: tuple[float, ...]


@dataclass(frozen=True)
class GridNull:
    """A finite explicit set of null parameters; the sup is their maximum."""

    points: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.points) == 0:
            raise ParameterError("grid null sets must be nonempty")


@dataclass(frozen=True)
class ConstrainedNull:
    """The full coefficient space of the null design (default)."""


@dataclass(frozen=True)
class WeightedProblem:
    """Everything needed to evaluate one plausibility function."""

    family: object
    theta0_space: object = field(default_factory=ConstrainedNull)
    weight: WeightSpec | None = None
    settings: IntegrationSettings = field(default_factory=IntegrationSettings)
    c_mode: str = "zero"              # normalisation for the unweighted mode
    psi_cols: tuple[int, ...] = ()    # interest coordinates of the alt design

    def __post_init__(self):
        if self.c_mode not in ("zero", "mle"):
            raise ParameterError("c_mode must be 'zero' or 'mle'")
        if self.weight is not None and self.weight.kind == "gof":
            object.__setattr__(self, "weight", None)


@dataclass(frozen=True)
class PlausibilityResult:
    p_value: float
    theta_star: ParamVector | None
    mc_se: float
    trace: tuple
    backend: str
    M: int
    seed: int
    warnings: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "p_value": self.p_value,
            "mc_se": self.mc_se,
            "backend": self.backend,
            "theta_star": (
                None if self.theta_star is None
                else [float(v) for v in self.theta_star.values]
            ),
            "M": self.M,
            "seed": self.seed,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class RegionResult:
    psi_grid: tuple[float, ...]
    ppl_values: tuple[float, ...]
    alpha: float
    region: tuple[float, ...]
    warnings: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "psi_grid": list(self.psi_grid),
            "ppl_values": list(self.ppl_values),
            "alpha": self.alpha,
            "region": list(self.region),
            "warnings": list(self.warnings),
        }


class CdfEstimate(NamedTuple):
    estimate: float
    se: float
    warnings: tuple[str, ...] = ()

    @property
    def reliable(self) -> bool:
        return _LOW_ESS not in self.warnings


_LOW_ESS = "low effective sample size in importance reweighting"


def statistic_T(data: Dataset, theta, family, c_mode: str = "mle",
                which: str = "alt") -> float:
    """exp(loglik(data, theta) - c(data)) with c the MLE loglik or zero.

    Computed in log space; with ``c_mode="mle"`` the value lies in (0, 1]
    and equals one exactly at the fitted maximum.
    """
    theta = _as_param(theta)
    ll = log_likelihood(family, theta, data, which)
    if c_mode == "mle":
        c = fit_mle(family, data, which).loglik
    elif c_mode == "zero":
        c = 0.0
    else:
        raise ParameterError("c_mode must be 'zero' or 'mle'")
    return math.exp(ll - c)


def _as_param(theta) -> ParamVector:
    if isinstance(theta, ParamVector):
        return theta
    return ParamVector(values=np.asarray(theta, dtype=float))


def _infer_which(family, theta: ParamVector) -> str:
    if theta.dim == len(family.null_cols):
        return "null"
    if theta.dim == len(family.alt_cols):
        return "alt"
    raise ParameterError(
        f"theta dimension {theta.dim} matches neither design "
        f"({len(family.null_cols)} null, {len(family.alt_cols)} alt columns)"
    )


# --------------------------------------------------------------------------
# Exact backend
# --------------------------------------------------------------------------


def _compositions(total: int, cells: int) -> np.ndarray:
    """All count vectors of length ``cells`` summing to ``total``.

    Generated in colexicographic order (last cell varying slowest) so that
    enumeration, and therefore floating point summation order, is fixed.
    """
    if cells == 1:
        return np.array([[total]], dtype=np.int64)
    rows = []
    for last in range(total + 1):
        rest = _compositions(total - last, cells - 1)
        rows.append(np.hstack([rest, np.full((rest.shape[0], 1), last)]))
    return np.vstack(rows)


class _ExactEvaluator:
    """Vectorised exact weighted CDF over class-wise count tables.

    ``eval_cols`` selects the design columns the evaluation parameter refers
    to.  The observed dataset's weight is taken from its own enumerated table
    so tie comparisons are exact.
    """

    is_exact = True

    def __init__(self, family: BinomialLogisticFamily, data: Dataset,
                 prepared: PreparedWeight | None, c_mode: str,
                 eval_cols: tuple[int, ...], cap: float = 1e8):
        if not isinstance(family, BinomialLogisticFamily):
            raise ParameterError("the exact backend requires a discrete family")
        if family.ascertainment:
            raise ParameterError(
                "engine backends sample the unconditional model; "
                "disable ascertainment for testing"
            )
        if prepared is not None and not prepared.exchangeable:
            raise ParameterError(
                "the exact backend enumerates count tables and requires a "
                "class-exchangeable weight"
            )
        self.family = family
        self.data = data
        self.prepared = prepared
        self.c_mode = c_mode
        self.eval_cols = tuple(eval_cols)
        t = family.trials
        labels = data.class_labels
        self.class_ids = np.unique(labels)
        self.members = [np.flatnonzero(labels == c) for c in self.class_ids]
        self.reps = [data.X[m[0], :][list(self.eval_cols)] for m in self.members]
        self.comps = [_compositions(len(m), t + 1) for m in self.members]
        self.sizes = [c.shape[0] for c in self.comps]
        self.total = int(np.prod([float(s) for s in self.sizes]))
        if self.total > cap:
            raise EnumerationCapError(
                f"{self.total:.3g} count tables exceed the cap {cap:.3g}; "
                "use the mc backend"
            )
        # Per-class log multinomial coefficients and expanded value vectors.
        self.logcoef = []
        self.values = []
        vals = np.arange(t + 1)
        for m, comp in zip(self.members, self.comps):
            n_c = len(m)
            lc = gammaln(n_c + 1.0) - gammaln(comp + 1.0).sum(axis=1)
            self.logcoef.append(lc)
            self.values.append(
                np.vstack([np.repeat(vals, row) for row in comp])
            )
        # Locate the observed table per class.
        self.obs_idx = []
        for m, comp in zip(self.members, self.comps):
            counts = np.bincount(np.asarray(data.y)[m], minlength=t + 1)
            match = np.flatnonzero((comp == counts).all(axis=1))
            self.obs_idx.append(int(match[0]))
        self._materialized = self.total <= _MATERIALIZE_CAP
        self._w = None
        self._c = None
        self._obs_flat = int(np.ravel_multi_index(
            np.array(self.obs_idx)[:, None], self.sizes
        )[0])
        if self._materialized:
            self._idx = np.stack(
                np.unravel_index(np.arange(self.total), self.sizes), axis=1
            )
            if prepared is not None:
                self._w = self._weights_for(self._idx)
            elif c_mode == "mle":
                self._c = self._mle_loglik_for(self._idx)
        elif prepared is not None or c_mode == "mle":
            # Streamed enumeration: the observed table's weight must come
            # from the same chunk evaluation that will produce it later.
            start = (self._obs_flat // _CHUNK) * _CHUNK
            stop = min(start + _CHUNK, self.total)
            idx = np.stack(
                np.unravel_index(np.arange(start, stop), self.sizes), axis=1
            )
            pos = self._obs_flat - start
            if prepared is not None:
                self._w_obs_stream = float(self._weights_for(idx)[pos])
            else:
                self._c_obs_stream = float(self._mle_loglik_for(idx)[pos])

    # -- candidate expansion ------------------------------------------------

    def _expand(self, idx: np.ndarray) -> np.ndarray:
        """Representative outcome vectors (n, B) for count-table indices."""
        Y = np.empty((self.data.n, idx.shape[0]), dtype=np.int64)
        for c, m in enumerate(self.members):
            Y[m, :] = self.values[c][idx[:, c]].T
        return Y

    def _weights_for(self, idx: np.ndarray) -> np.ndarray:
        return self.prepared.matrix(self._expand(idx), self.data)

    def _mle_loglik_for(self, idx: np.ndarray) -> np.ndarray:
        X = self.data.X[:, list(self.eval_cols)]
        _, ll, _, _ = _batch_irls(X, self._expand(idx), self.family.trials)
        return ll

    # -- per-theta pieces ----------------------------------------------------

    def _class_logprobs(self, theta: np.ndarray):
        """Per class: sequence and event log-probabilities per count table.

        The sequence version (no multinomial coefficient) is the dataset
        likelihood all orderings share; the event version adds the table
        multiplicity and is what sums to one.
        """
        t = self.family.trials
        vals = np.arange(t + 1)
        seq, event = [], []
        lb = _log_binom_coef(vals, t)
        for rep, comp, lc in zip(self.reps, self.comps, self.logcoef):
            eta = float(rep @ theta)
            logp = lb + vals * eta - t * np.logaddexp(0.0, eta)
            contrib = comp @ logp
            seq.append(contrib)
            event.append(contrib + lc)
        return seq, event

    def seq_loglik(self, theta: np.ndarray, idx: np.ndarray) -> np.ndarray:
        seq, _ = self._class_logprobs(np.asarray(theta, dtype=float))
        out = np.zeros(idx.shape[0])
        for c in range(len(self.members)):
            out += seq[c][idx[:, c]]
        return out

    def _indicator(self, theta, idx, seq) -> np.ndarray:
        if self.prepared is not None:
            if self._w is not None:
                w = self._w[np.ravel_multi_index(idx.T, self.sizes)]
                w_obs = self._w[self._obs_flat]
            else:
                w = self._weights_for(idx)
                w_obs = self._w_obs_stream
            return w <= w_obs
        # Unweighted: order by the candidate likelihood at theta itself.
        ll = np.zeros(idx.shape[0])
        for c in range(len(self.members)):
            ll += seq[c][idx[:, c]]
        ll_obs = sum(seq[c][self.obs_idx[c]] for c in range(len(self.members)))
        if self.c_mode == "mle":
            if self._c is not None:
                c_vec = self._c[np.ravel_multi_index(idx.T, self.sizes)]
                c_obs = self._c[self._obs_flat]
            else:
                c_vec = self._mle_loglik_for(idx)
                c_obs = self._c_obs_stream
            return (ll - c_vec) <= (ll_obs - c_obs)
        return ll <= ll_obs

    def cdf(self, theta) -> CdfEstimate:
        theta = np.asarray(theta, dtype=float)
        if theta.size != len(self.eval_cols):
            raise ParameterError("theta does not match the evaluation design")
        seq, event = self._class_logprobs(theta)
        total = 0.0
        for start in range(0, self.total, _CHUNK):
            stop = min(start + _CHUNK, self.total)
            if self._materialized:
                idx = self._idx[start:stop]
            else:
                idx = np.stack(
                    np.unravel_index(np.arange(start, stop), self.sizes), axis=1
                )
            logp = np.zeros(idx.shape[0])
            for c in range(len(self.members)):
                logp += event[c][idx[:, c]]
            keep = self._indicator(theta, idx, seq)
            if keep.any():
                total += float(np.exp(logp[keep]).sum())
        return CdfEstimate(min(total, 1.0), 0.0, ())


# --------------------------------------------------------------------------
# Monte Carlo backends
# --------------------------------------------------------------------------


def _binom_seq_loglik_fast(Y: np.ndarray, const: np.ndarray, X: np.ndarray,
                           trials: int, theta: np.ndarray) -> np.ndarray:
    eta = X @ theta
    return const + Y.T @ eta - trials * float(np.logaddexp(0.0, eta).sum())


class _ImportanceEvaluator:
    """Base sample at a proposal parameter, reweighted for other parameters.

    At the proposal itself the inclusive-tie estimator
    ``(1 + count) / (M + 1)`` applies; elsewhere the self-normalised
    importance estimator ``sum(r_j I_j) / sum(r_j)`` with likelihood ratios
    computed in log space.  The standard error linearises the ratio
    estimator; at the proposal it reduces to the binomial one.
    """

    is_exact = False

    def __init__(self, family, data: Dataset, prepared: PreparedWeight | None,
                 c_mode: str, eval_cols: tuple[int, ...],
                 theta_prop: np.ndarray, settings: IntegrationSettings):
        if getattr(family, "ascertainment", False):
            raise ParameterError(
                "engine backends sample the unconditional model; "
                "disable ascertainment for testing"
            )
        self.family = family
        self.data = data
        self.prepared = prepared
        self.c_mode = c_mode
        self.eval_cols = tuple(eval_cols)
        self.settings = settings
        self.theta_prop = np.asarray(theta_prop, dtype=float)
        self.X = data.X[:, list(self.eval_cols)]
        which = _infer_which_cols(family, self.eval_cols)
        self.Y = sample_outcomes(
            family, ParamVector(values=self.theta_prop), data,
            seed_path(settings.seed, 0), settings.M, which=which,
        )
        self._canonical = prepared is None or prepared.exchangeable
        obs_y = np.asarray(data.y)
        if self._canonical:
            self.Y = _canonicalize_classes(self.Y, data)
            obs_y = _canonicalize_classes(obs_y[:, None], data)[:, 0]
        # Candidates and the observed outcome flow through one stacked matrix
        # so likelihood and weight ties are bitwise consistent.
        self._Yall = np.column_stack([self.Y, obs_y])
        if isinstance(family, BinomialLogisticFamily):
            self._const_all = _log_binom_coef(self._Yall, family.trials).sum(axis=0)
        self._ll_prop = self.seq_ll_all(self.theta_prop)[0]
        if prepared is not None:
            w_all = prepared.matrix(self._Yall, data)
            self._w = w_all[:-1]
            self._w_obs = float(w_all[-1])
        elif c_mode == "mle":
            _, c_all, _, _ = _batch_irls(self.X, self._Yall, family.trials)
            self._c = c_all[:-1]
            self._c_obs = float(c_all[-1])

    def seq_ll_all(self, theta: np.ndarray):
        """Candidate log-likelihoods at ``theta`` plus the observed one."""
        theta = np.asarray(theta, dtype=float)
        if isinstance(self.family, BinomialLogisticFamily):
            ll = _binom_seq_loglik_fast(
                self._Yall, self._const_all, self.X, self.family.trials, theta
            )
            return ll[:-1], float(ll[-1])
        raise ParameterError("generic Monte Carlo requires a binomial family")

    def cdf(self, theta) -> CdfEstimate:
        theta = np.asarray(theta, dtype=float)
        M = self.settings.M
        ll_vec, ll_obs = self.seq_ll_all(theta)
        if self.prepared is not None:
            I = self._w <= self._w_obs
        elif self.c_mode == "zero":
            I = ll_vec <= ll_obs
        else:
            I = (ll_vec - self._c) <= (ll_obs - self._c_obs)
        if np.array_equal(theta, self.theta_prop):
            count = int(I.sum())
            est = (1.0 + count) / (M + 1.0)
            se = float(np.std(I.astype(float), ddof=1) / math.sqrt(M))
            return CdfEstimate(est, se, ())
        logr = ll_vec - self._ll_prop
        logr -= logr.max()
        r = np.exp(logr)
        r_sum = float(r.sum())
        warnings = ()
        if r_sum / float(r.max()) < 10.0:
            warnings = (_LOW_ESS,)
        num = float((r * I).sum())
        est = num / r_sum
        resid = r * I - est * r
        se = float(np.std(resid, ddof=1) / (r.mean() * math.sqrt(M)))
        return CdfEstimate(est, se, warnings)


class _FreshMcEvaluator:
    """Plain Monte Carlo: a fresh null sample at every evaluated point."""

    is_exact = False

    def __init__(self, family, data, prepared, c_mode, eval_cols, settings):
        self.args = (family, data, prepared, c_mode, eval_cols)
        self.settings = settings
        self._n_evals = 0

    def cdf(self, theta) -> CdfEstimate:
        family, data, prepared, c_mode, eval_cols = self.args
        self._n_evals += 1
        sub = IntegrationSettings(
            M=self.settings.M,
            seed=seed_path(self.settings.seed, self._n_evals),
            backend="importance",
        )
        ev = _ImportanceEvaluator(family, data, prepared, c_mode, eval_cols,
                                  np.asarray(theta, dtype=float), sub)
        return ev.cdf(theta)


def _canonicalize_classes(Y: np.ndarray, data: Dataset) -> np.ndarray:
    """Sort outcomes within each covariate class.

    Class-exchangeable weights are constant across within-class orderings in
    exact arithmetic, but iterative fits can break such ties by last-bit
    amounts depending on row order.  Sorting fixes one representative per
    count table so floating point evaluation respects the exact ties; it is
    distributionally neutral because class members are iid.
    """
    out = np.array(Y, copy=True)
    labels = data.class_labels
    for c in np.unique(labels):
        m = labels == c
        out[m] = np.sort(out[m], axis=0)
    return out


def seed_path(seed: int, k: int) -> int:
    # Collision-free arithmetic embedding; keeps child seeds non-negative.
    return int(seed) * 10_007 + k


def _infer_which_cols(family, cols: tuple[int, ...]) -> str:
    if tuple(cols) == tuple(family.null_cols):
        return "null"
    if tuple(cols) == tuple(family.alt_cols):
        return "alt"
    raise ParameterError("evaluation columns match neither nested design")


def fit_mle_restricted(family, data: Dataset, cols: tuple[int, ...]):
    """MLE of the family restricted to an explicit column set."""
    which = _infer_which_cols(family, cols)
    return fit_mle(family, data, which)


# --------------------------------------------------------------------------
# Supremum search
# --------------------------------------------------------------------------


def _fisher_se(family, data: Dataset, cols: tuple[int, ...],
               theta: np.ndarray) -> np.ndarray:
    X = data.X[:, list(cols)]
    if isinstance(family, BinomialLogisticFamily):
        pi = expit(X @ theta)
        W = np.maximum(family.trials * pi * (1 - pi), 1e-8)
        info = X.T @ (X * W[:, None])
    else:
        resid = data.y - X @ theta
        df = max(data.n - X.shape[1], 1)
        sigma2 = float(resid @ resid) / df
        info = X.T @ X / max(sigma2, 1e-12)
    cov = np.linalg.pinv(info)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return np.clip(se, *_SE_CLIP)


def _search_supremum(cdf, center: np.ndarray, ses: np.ndarray,
                     free: np.ndarray | None = None,
                     grid_points: int = _GRID_POINTS,
                     span: float = _GRID_SPAN,
                     refine: bool = True):
    """Coarse grid around the centre followed by Nelder-Mead refinement.

    ``free`` masks the coordinates being searched; pinned coordinates stay at
    their ``center`` values.  The whole search is confined to the trust
    region ``center +- span * se``: far outside it stochastic estimates are
    unreliable and degenerate profile directions can push the CDF to one, so
    refinement candidates are projected back onto the region.  Returns
    ``(theta, CdfEstimate, trace)`` with every evaluation recorded.
    """
    center = np.asarray(center, dtype=float)
    d_all = center.size
    if free is None:
        free = np.ones(d_all, dtype=bool)
    idx_free = np.flatnonzero(free)
    trace: list[tuple[tuple[float, ...], float]] = []
    lo = center[idx_free] - span * ses[idx_free]
    hi = center[idx_free] + span * ses[idx_free]

    def embed(free_vals: np.ndarray) -> np.ndarray:
        theta = center.copy()
        theta[idx_free] = free_vals
        return theta

    def evaluate(free_vals: np.ndarray) -> CdfEstimate:
        theta = embed(free_vals)
        out = cdf(theta)
        trace.append((tuple(float(v) for v in theta), float(out.estimate)))
        return out

    d = idx_free.size
    points = grid_points
    if points**d > _GRID_BUDGET:
        points = 3
    axes = [
        center[j] + span * ses[j] * np.linspace(-1.0, 1.0, points)
        for j in idx_free
    ]
    if points**d > _GRID_BUDGET or d == 0:
        grid = [center[idx_free]]
    else:
        mesh = np.meshgrid(*axes, indexing="ij") if d else []
        grid = (
            np.stack([m.ravel() for m in mesh], axis=1) if d else
            np.zeros((1, 0))
        )

    # The centre (the proposal itself) is always a trustworthy evaluation;
    # importance estimates whose effective sample size collapsed are noise
    # and may not decide the supremum.
    best_free = np.asarray(center[idx_free], dtype=float)
    best = evaluate(best_free)
    def consider(free_vals, out):
        nonlocal best, best_free
        if out.reliable and out.estimate > best.estimate:
            best, best_free = out, np.asarray(free_vals, dtype=float)

    for row in grid:
        row = np.asarray(row, dtype=float)
        if np.array_equal(row, center[idx_free]):
            continue
        consider(row, evaluate(row))

    if refine and d > 0:
        def objective(v):
            out = evaluate(np.clip(v, lo, hi))
            consider(np.clip(v, lo, hi), out)
            return -out.estimate if out.reliable else 1.0

        minimize(
            objective, best_free, method="Nelder-Mead",
            options={"maxfev": _NM_MAXFEV, "fatol": _NM_FATOL,
                     "xatol": 1e-4},
        )
    return embed(best_free), best, tuple(trace)


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------


def cdf_weighted_exact(family, theta, weight: WeightSpec | None,
                       data: Dataset, cap: float = 1e8) -> float:
    """Exact weighted null CDF at one parameter.

    ``weight=None`` orders candidates by their likelihood at ``theta``.
    """
    theta = _as_param(theta)
    which = _infer_which(family, theta)
    prepared = prepare_weight(weight, data) if weight is not None else None
    ev = _ExactEvaluator(family, data, prepared, "zero",
                         family.cols(which), cap=cap)
    return ev.cdf(theta.values).estimate


def cdf_weighted_mc(family, theta_eval, theta_proposal,
                    weight: WeightSpec | None, data: Dataset,
                    settings: IntegrationSettings) -> CdfEstimate:
    """Monte Carlo weighted null CDF with importance reweighting.

    The base sample is drawn at ``theta_proposal``; evaluation at
    ``theta_eval`` reweights it by the likelihood ratio.  With
    ``theta_eval == theta_proposal`` this is exactly the plain inclusive
    estimator for the same seed.
    """
    theta_eval = _as_param(theta_eval)
    theta_prop = _as_param(theta_proposal)
    if theta_eval.dim != theta_prop.dim:
        raise ParameterError("evaluation and proposal dimensions differ")
    which = _infer_which(family, theta_eval)
    prepared = prepare_weight(weight, data) if weight is not None else None
    ev = _ImportanceEvaluator(family, data, prepared, "zero",
                              family.cols(which), theta_prop.values, settings)
    return ev.cdf(theta_eval.values)


def _build_evaluator(problem: WeightedProblem, data: Dataset,
                     eval_cols: tuple[int, ...], theta_prop: np.ndarray):
    prepared = (
        prepare_weight(problem.weight, data)
        if problem.weight is not None else None
    )
    s = problem.settings
    if s.backend == "exact":
        return _ExactEvaluator(problem.family, data, prepared, problem.c_mode,
                               eval_cols, cap=s.enumeration_cap)
    if s.backend == "importance" and s.reuse_base_theta:
        return _ImportanceEvaluator(problem.family, data, prepared,
                                    problem.c_mode, eval_cols, theta_prop, s)
    return _FreshMcEvaluator(problem.family, data, prepared, problem.c_mode,
                             eval_cols, s)


def _finalize(best_theta, best: CdfEstimate, trace, problem, extra_warnings=()):
    s = problem.settings
    warnings = tuple(dict.fromkeys(best.warnings + tuple(extra_warnings)))
    p = best.estimate
    if s.backend != "exact" and p <= 0.0:
        p = 1.0 / (s.M + 1.0)
        warnings = warnings + ("p-value below Monte Carlo resolution",)
    theta_star = ParamVector(
        values=best_theta,
        psi_index=problem.psi_cols,
        lambda_index=tuple(
            i for i in range(len(best_theta)) if i not in problem.psi_cols
        ) if problem.psi_cols else (),
    )
    return PlausibilityResult(
        p_value=float(min(p, 1.0)),
        theta_star=theta_star,
        mc_se=float(best.se),
        trace=trace,
        backend=s.backend,
        M=s.M if s.backend != "exact" else 0,
        seed=s.seed,
        warnings=warnings,
    )


def plausibility(problem: WeightedProblem, data: Dataset) -> PlausibilityResult:
    """Supremum of the weighted null CDF over the null parameter set.

    For a constrained null the search runs a coarse grid around the null
    fit (span 3 standard errors, 7 points per free dimension) followed by
    Nelder-Mead from the grid maximiser, reusing the importance-sampling
    base sample across evaluations.
    """
    family = problem.family
    eval_cols = tuple(family.null_cols)
    space = problem.theta0_space
    s = problem.settings

    if isinstance(space, PointNull):
        theta = np.asarray(space.theta, dtype=float)
        ev = _build_evaluator(problem, data, eval_cols, theta)
        best = ev.cdf(theta)
        return _finalize(theta, best, ((tuple(theta), best.estimate),), problem)

    if isinstance(space, GridNull):
        pts = [np.asarray(p, dtype=float) for p in space.points]
        theta_prop = pts[0]
        if s.backend == "importance":
            theta_prop = fit_mle_restricted(family, data, eval_cols).theta_hat.values
        ev = _build_evaluator(problem, data, eval_cols, theta_prop)
        trace = []
        best, best_theta = None, None
        for pt in pts:
            out = ev.cdf(pt)
            trace.append((tuple(float(v) for v in pt), float(out.estimate)))
            if best is None or out.estimate > best.estimate:
                best, best_theta = out, pt
        return _finalize(best_theta, best, tuple(trace), problem)

    if s.backend == "mc" or not s.reuse_base_theta:
        raise ParameterError(
            "constrained suprema need the importance backend with base "
            "sample reuse; fresh-draw evaluation supports point and grid "
            "null sets only"
        )
    fit0 = fit_mle_restricted(family, data, eval_cols)
    center = fit0.theta_hat.values
    ses = _fisher_se(family, data, eval_cols, center)
    ev = _build_evaluator(problem, data, eval_cols, center)
    flags = () if fit0.converged else ("null fit clamped (separation)",)
    best_theta, best, trace = _search_supremum(ev.cdf, center, ses)
    return _finalize(best_theta, best, trace, problem, flags)


def weighted_test(data: Dataset, null_formula, alt_formula,
                  family: str = "binomial",
                  settings: IntegrationSettings | None = None,
                  weight_kind: str = "lr",
                  ascertainment: bool = False) -> PlausibilityResult:
    """Weighted plausibility model comparison for two nested formulas.

    Builds the LR weight (or a chosen kind) for the comparison, constrains
    the null set to the null design's coefficient space and runs
    :func:`plausibility`.  Smaller p-values mean stronger evidence for the
    alternative.
    """
    from .formula import formula_columns

    settings = settings or IntegrationSettings()
    null_cols = (tuple(null_formula) if isinstance(null_formula, (tuple, list))
                 else formula_columns(data, null_formula))
    alt_cols = (tuple(alt_formula) if isinstance(alt_formula, (tuple, list))
                else formula_columns(data, alt_formula))
    if family == "binomial":
        fam = BinomialLogisticFamily(null_cols=null_cols, alt_cols=alt_cols,
                                     trials=data.trials,
                                     ascertainment=ascertainment)
    elif family == "gaussian":
        fam = GaussianLinearFamily(null_cols=null_cols, alt_cols=alt_cols)
    else:
        raise ParameterError(f"unknown family {family!r}")
    spec = WeightSpec(kind=weight_kind, family=fam)
    problem = WeightedProblem(family=fam, theta0_space=ConstrainedNull(),
                              weight=spec, settings=settings)
    return plausibility(problem, data)


# --------------------------------------------------------------------------
# Profile plausibility and marginal regions
# --------------------------------------------------------------------------


class _ProfileMachinery:
    """Shared setup for profile evaluations over a grid of interest values.

    The anchor estimate (psi*, lambda*) is the unweighted plausibility
    estimate over the full alternative space, computed once per dataset; the
    per-psi weight compares candidate likelihoods at (psi, lambda*) against
    the anchor.
    """

    def __init__(self, problem: WeightedProblem, data: Dataset):
        if not problem.psi_cols:
            raise ParameterError("profile plausibility needs psi_cols declared")
        self.problem = problem
        self.data = data
        self.family = problem.family
        self.alt_cols = tuple(self.family.alt_cols)
        self.psi_pos = tuple(int(c) for c in problem.psi_cols)
        fit1 = fit_mle(self.family, data, "alt")
        self.center = fit1.theta_hat.values
        self.ses = _fisher_se(self.family, data, self.alt_cols, self.center)
        gof_problem = WeightedProblem(
            family=self.family, settings=problem.settings,
            c_mode=problem.c_mode,
        )
        ev = _build_evaluator(gof_problem, data, self.alt_cols, self.center)
        self._ev = ev
        star, best, _ = _search_supremum(ev.cdf, self.center, self.ses)
        self.theta_star = star
        free = np.ones(len(self.alt_cols), dtype=bool)
        free[list(self.psi_pos)] = False
        self.free = free

    def _cdf_for_psi(self, psi_values: np.ndarray):
        theta_anchor = self.theta_star
        theta_psi = theta_anchor.copy()
        theta_psi[list(self.psi_pos)] = psi_values
        ev = self._ev
        if isinstance(ev, _ExactEvaluator):
            if not ev._materialized:
                raise EnumerationCapError(
                    "profile over streamed enumerations is unsupported; "
                    "use the importance backend"
                )
            idx = ev._idx
            w = ev.seq_loglik(theta_psi, idx) - ev.seq_loglik(theta_anchor, idx)
            obs = np.array([ev.obs_idx])
            w_obs = float(
                ev.seq_loglik(theta_psi, obs)[0]
                - ev.seq_loglik(theta_anchor, obs)[0]
            )

            def cdf(theta):
                return _exact_cdf_fixed_weight(ev, theta, w, w_obs)
        else:
            ll_a, ll_a_obs = ev.seq_ll_all(theta_psi)
            ll_b, ll_b_obs = ev.seq_ll_all(theta_anchor)
            w = ll_a - ll_b
            w_obs = float(ll_a_obs - ll_b_obs)

            def cdf(theta):
                return _mc_cdf_fixed_weight(ev, theta, w, w_obs)

        return cdf, theta_psi

    def ppl(self, psi_values) -> float:
        psi_values = np.atleast_1d(np.asarray(psi_values, dtype=float))
        if psi_values.size != len(self.psi_pos):
            raise ParameterError("psi value dimension mismatch")
        cdf, theta_psi = self._cdf_for_psi(psi_values)
        center = self.center.copy()
        center[list(self.psi_pos)] = psi_values
        _, best, _ = _search_supremum(cdf, center, self.ses, free=self.free,
                                      span=_PROFILE_SPAN)
        return float(min(best.estimate, 1.0))


def _exact_cdf_fixed_weight(ev: _ExactEvaluator, theta, w, w_obs):
    _, event = ev._class_logprobs(np.asarray(theta, dtype=float))
    logp = np.zeros(ev.total)
    for c in range(len(ev.members)):
        logp += event[c][ev._idx[:, c]]
    keep = w <= w_obs
    return CdfEstimate(float(min(np.exp(logp[keep]).sum(), 1.0)), 0.0, ())


def _mc_cdf_fixed_weight(ev: _ImportanceEvaluator, theta, w, w_obs):
    theta = np.asarray(theta, dtype=float)
    M = ev.settings.M
    I = w <= w_obs
    if np.array_equal(theta, ev.theta_prop):
        count = int(I.sum())
        est = (1.0 + count) / (M + 1.0)
        se = float(np.std(I.astype(float), ddof=1) / math.sqrt(M))
        return CdfEstimate(est, se, ())
    logr = ev.seq_ll_all(theta)[0] - ev._ll_prop
    logr -= logr.max()
    r = np.exp(logr)
    est = float((r * I).sum() / r.sum())
    resid = r * I - est * r
    se = float(np.std(resid, ddof=1) / (r.mean() * math.sqrt(M)))
    return CdfEstimate(est, se, ())


def profile_plausibility(problem: WeightedProblem, psi, data: Dataset) -> float:
    """Profile plausibility of the interest value ``psi``.

    Nuisance coordinates are supremised out with the interest coordinates
    held fixed; the ordering compares candidate likelihoods at
    (psi, lambda*) against the unconstrained plausibility estimate.
    """
    return _ProfileMachinery(problem, data).ppl(psi)


def marginal_region(problem: WeightedProblem, data: Dataset, alpha: float,
                    psi_grid) -> RegionResult:
    """Superlevel set {psi : profile plausibility > alpha} over a grid."""
    if not 0.0 <= alpha < 1.0:
        raise ParameterError("alpha must lie in [0, 1)")
    machinery = _ProfileMachinery(problem, data)
    grid = [float(p) for p in psi_grid]
    values = [machinery.ppl(p) for p in grid]
    region = [p for p, v in zip(grid, values) if v > alpha]
    warnings: list[str] = []
    if region and (region[0] == grid[0] or region[-1] == grid[-1]):
        warnings.append("region touches the psi grid boundary")
    if not region:
        warnings.append(f"empty region; maximal ppl {max(values):.6g}")
    return RegionResult(
        psi_grid=tuple(grid), ppl_values=tuple(values), alpha=float(alpha),
        region=tuple(region), warnings=tuple(warnings),
    )


# --------------------------------------------------------------------------
# Gaussian conditional-sphere plausibility (high-dimensional global test)
# --------------------------------------------------------------------------


def _sphere_draws(y: np.ndarray, Q0: np.ndarray, M: int, seed: int):
    """Null draws conditional on the null fit: residual direction uniform.

    Standard normal vectors are residualised against the null design and
    rescaled so their residual sum of squares matches the observed one;
    adding back the null fitted values gives candidates sharing the observed
    null-model mean and variance.
    """
    n = y.shape[0]
    fitted0 = Q0 @ (Q0.T @ y) if Q0.shape[1] else np.zeros(n)
    rss0 = float((y - fitted0) @ (y - fitted0))
    if rss0 <= 1e-12 * max(1.0, float(y @ y)):
        raise NumericDomainError("degenerate data: zero residual variance")
    Z = rng_for(seed, 0).standard_normal((n, M))
    if Q0.shape[1]:
        Z = Z - Q0 @ (Q0.T @ Z)
    norms = np.sqrt(np.einsum("nm,nm->m", Z, Z))
    Z = Z * (math.sqrt(rss0) / norms)[None, :]
    return fitted0[:, None] + Z, rss0


def gaussian_profile_plausibility(y, X, null_cols, weight: WeightSpec | None,
                                  settings: IntegrationSettings | None = None,
                                  weight_builder=None) -> PlausibilityResult:
    """Global Gaussian test with the variance profiled at the null estimate.

    ``X`` carries the candidate predictors (no intercept column; the
    intercept is part of the null).  ``null_cols`` indexes nuisance columns
    of ``X`` kept under the null.  Null draws live on the sphere determined
    by the observed null fit, and the p-value is the inclusive fraction of
    draws whose weight does not exceed the observed weight.  A constant
    weight therefore returns exactly one.
    """
    settings = settings or IntegrationSettings(M=10_000, seed=0)
    y = np.asarray(y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = X.shape
    null_cols = tuple(null_cols)
    columns = (
        "(Intercept)",
        *(f"x{j + 1}" for j in range(p)),
    )
    Xfull = np.column_stack([np.ones(n), X])
    data = Dataset(y=y, X=Xfull, columns=columns, trials=1,
                   class_labels=np.arange(n))
    fam_null = (0,) + tuple(1 + c for c in null_cols)
    fam_alt = tuple(range(p + 1))
    family = GaussianLinearFamily(null_cols=fam_null, alt_cols=fam_alt)

    if weight_builder is not None:
        prepared = weight_builder(family, data)
    elif weight is None:
        raise ParameterError(
            "the Gaussian profile plausibility is degenerate without a "
            "weight; supply one"
        )
    else:
        weight = _with_family(weight, family)
        prepared = prepare_weight(weight, data)

    X0 = Xfull[:, list(fam_null)]
    Q0, _ = np.linalg.qr(X0)
    df0 = n - len(fam_null)
    if df0 <= 0:
        raise NumericDomainError("null design leaves no residual freedom")
    Y, rss0 = _sphere_draws(y, Q0, settings.M, settings.seed)
    sigma2 = rss0 / df0

    w_all = prepared.matrix(np.column_stack([Y, y]), data)
    w_vec, w_obs = w_all[:-1], float(w_all[-1])
    count = int((w_vec <= w_obs).sum())
    p_value = (1.0 + count) / (settings.M + 1.0)
    se = float(np.std((w_vec <= w_obs).astype(float), ddof=1)
               / math.sqrt(settings.M))

    beta = np.linalg.lstsq(Xfull, y, rcond=None)[0]
    theta_star = ParamVector(values=beta, sigma2=sigma2)
    return PlausibilityResult(
        p_value=float(p_value), theta_star=theta_star, mc_se=se,
        trace=(), backend="mc", M=settings.M, seed=settings.seed,
    )


def _with_family(spec: WeightSpec, family) -> WeightSpec:
    if spec.kind in ("lr", "relative_lr", "penalized_lr") and spec.family is None:
        return WeightSpec(kind=spec.kind, family=family, penalty=spec.penalty,
                          statistic=spec.statistic)
    return spec


def gaussian_plausibility_estimate(y, X, start=None,
                                   return_value: bool = False):
    """Coefficient value maximising the Gaussian goodness-of-fit CDF.

    With the variance profiled at the unbiased null residual estimate, the
    CDF at ``beta`` is the upper chi-square tail of the scaled residual sum
    of squares, a strictly decreasing function of ||y - X beta||.  The
    maximiser is located by Nelder-Mead refinement of that objective.
    """
    y = np.asarray(y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = X.shape
    sigma2 = float(np.var(y, ddof=1))
    if sigma2 <= 0:
        raise NumericDomainError("degenerate data: zero variance")

    def rss(beta):
        r = y - X @ beta
        return float(r @ r)

    x0 = np.zeros(p) if start is None else np.asarray(start, dtype=float)
    res = minimize(rss, x0, method="Nelder-Mead",
                   options={"maxfev": 20_000, "xatol": 1e-9, "fatol": 1e-12})
    beta = res.x
    if return_value:
        value = float(chi2.sf(rss(beta) / sigma2, df=n))
        return beta, value
    return beta
