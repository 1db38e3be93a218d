"""Matched case-control analysis of binary outcomes.

Exact-stratum propensity matching, conditional logistic regression on
case-minus-control differences and a random-intercept logistic model fitted
by adaptive Gauss-Hermite quadrature.
"""

__version__ = "0.1.0"

from .data import Dataset, Record, StratumKey, describe_attributes, load_dataset, recognition_rate, write_dataset
from .errors import (
    ConfigError,
    ConvergenceError,
    FitError,
    IntegrityError,
    MatchedPairsError,
    OutputError,
    SchemaError,
    SeparationError,
    ValidationError,
)
from .glm import FitSpec, FittedGlm, fit_logistic, odds_ratio, wald_test
from .glmm import FittedGlmm, MixedFitSpec, fit_random_intercept_logistic, group_marginal_loglik, marginal_loglik
from .matching import (
    ConstraintSet,
    MatchedSet,
    PairRow,
    PropensityModel,
    balance_check,
    build_pair_rows,
    compute_propensity,
    match_cases,
)
from .paired import (
    FitReport,
    InteractionDesign,
    build_interaction_design,
    fit_conditional_pairs,
    fit_paired_mixed,
    group_odds_summary,
    stack_matched_sets,
)
from .pipeline import PipelineConfig, run_pipeline
from .selection import SelectionTrace, forward_select
from .synth import GeneratorConfig, generate_dataset

__all__ = [
    "Dataset",
    "Record",
    "StratumKey",
    "describe_attributes",
    "load_dataset",
    "recognition_rate",
    "write_dataset",
    "ConfigError",
    "ConvergenceError",
    "FitError",
    "IntegrityError",
    "MatchedPairsError",
    "OutputError",
    "SchemaError",
    "SeparationError",
    "ValidationError",
    "FitSpec",
    "FittedGlm",
    "fit_logistic",
    "odds_ratio",
    "wald_test",
    "FittedGlmm",
    "MixedFitSpec",
    "fit_random_intercept_logistic",
    "group_marginal_loglik",
    "marginal_loglik",
    "ConstraintSet",
    "MatchedSet",
    "PairRow",
    "PropensityModel",
    "balance_check",
    "build_pair_rows",
    "compute_propensity",
    "match_cases",
    "FitReport",
    "InteractionDesign",
    "build_interaction_design",
    "fit_conditional_pairs",
    "fit_paired_mixed",
    "group_odds_summary",
    "stack_matched_sets",
    "PipelineConfig",
    "run_pipeline",
    "SelectionTrace",
    "forward_select",
    "GeneratorConfig",
    "generate_dataset",
]
