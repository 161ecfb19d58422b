"""Simulation-based assessment of inference methods.

Regenerate outcomes under an imposed null with a chosen error distribution,
re-run a candidate inference method on every replicate, and report its
empirical size, p-value distribution, and power.
"""

from .datamodel import Dataset, FitResult, LinearHypothesis, load_dataset, load_shocks, validate_nesting
from .engine import (
    AssessmentReport,
    AssessmentSpec,
    RejectionRate,
    SweepResult,
    pvalue_cdf,
    run_assessment,
    run_power,
    worst_case_sweep,
)
from .errorgen import ErrorModel, ShockScheme, draw_errors, draw_shocks, fit_variance_model
from .errors import (
    AssessmentAbortError,
    ConfigurationError,
    DegenerateTestError,
    InferAssessError,
    ParseError,
    SchemaError,
    SingularDesignError,
    ValidationError,
)
from .matching import MatchSpec, MatchTestSpec, ai_t_test, att_match, match_sign_change_p
from .regression import DesignSolver, fit, fit_restricted, partial_out
from .resampling import (
    ConfidenceRegion,
    ResamplingTestSpec,
    akm0_ci,
    akm0_p,
    akm_p,
    akm_se,
    permutation_p,
    sign_change_p,
    wild_cluster_p,
)
from .streams import substream
from .variance import VarianceSpec, effective_clusters, standard_error, t_test

__version__ = "0.1.0"

__all__ = [
    "AssessmentAbortError",
    "AssessmentReport",
    "AssessmentSpec",
    "ConfidenceRegion",
    "ConfigurationError",
    "Dataset",
    "DegenerateTestError",
    "DesignSolver",
    "ErrorModel",
    "FitResult",
    "InferAssessError",
    "LinearHypothesis",
    "MatchSpec",
    "MatchTestSpec",
    "ParseError",
    "RejectionRate",
    "ResamplingTestSpec",
    "SchemaError",
    "ShockScheme",
    "SingularDesignError",
    "SweepResult",
    "ValidationError",
    "VarianceSpec",
    "ai_t_test",
    "akm0_ci",
    "akm0_p",
    "akm_p",
    "akm_se",
    "att_match",
    "draw_errors",
    "draw_shocks",
    "effective_clusters",
    "fit",
    "fit_restricted",
    "fit_variance_model",
    "load_dataset",
    "load_shocks",
    "match_sign_change_p",
    "partial_out",
    "permutation_p",
    "pvalue_cdf",
    "run_assessment",
    "run_power",
    "sign_change_p",
    "standard_error",
    "substream",
    "t_test",
    "validate_nesting",
    "wild_cluster_p",
    "worst_case_sweep",
]
