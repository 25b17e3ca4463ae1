"""Exact plausibility inference for parametric models.

Weighted and unweighted plausibility tests with exact-enumeration and
importance-sampled Monte Carlo backends, profile plausibility and marginal
regions, penalized-regression weights for high-dimensional global nulls,
classical comparator tests, and a seeded simulation harness.
"""

from .comparators import TestResult, bootstrap_test, lasso_multi_split, lr_test, pearson_gof
from .engine import (
    ConstrainedNull,
    GridNull,
    IntegrationSettings,
    PlausibilityResult,
    PointNull,
    RegionResult,
    WeightedProblem,
    cdf_weighted_exact,
    cdf_weighted_mc,
    gaussian_plausibility_estimate,
    gaussian_profile_plausibility,
    marginal_region,
    plausibility,
    profile_plausibility,
    statistic_T,
    weighted_test,
)
from .errors import (
    ConvergenceError,
    DataError,
    DesignError,
    EnumerationCapError,
    NumericDomainError,
    ParameterError,
    PlausError,
)
from .formula import Formula, formula_columns, parse_formula
from .model import (
    BinomialLogisticFamily,
    Dataset,
    FitResult,
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
from .penalized import (
    PenalizedFit,
    PenaltySpec,
    cross_validate,
    fit_elastic_net,
    fit_ridge,
    lambda_max,
)
from .sim import (
    BenchTable,
    HighDimScenario,
    PedigreeScenario,
    carriers_only,
    get_scenario,
    run_replications,
    simulate_highdim,
    simulate_pedigree,
)
from .weights import (
    WeightSpec,
    gof_weight,
    lr_weight,
    penalized_lr_weight,
    prepare_weight,
    relative_lr_weight,
)

__version__ = "0.1.0"
