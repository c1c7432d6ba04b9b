"""Regression-implied weights, balancing weights and matching for the ATT,
with balance diagnostics and reports."""

from .core import Dataset, DesignSpec, Group, Method, Term, WeightVector, build_design_matrix, ols_fit
from .data import CsvSchema, GeneratorConfig, generate_synthetic_example, load_csv, write_csv
from .diagnostics import (
    balance_table,
    effective_sample_size,
    implied_target_profile,
    negative_weight_report,
    sample_boundedness_check,
)
from .errors import (
    BudgetExceededError,
    ConvergenceError,
    InfeasibleError,
    RankDeficiencyError,
    RegContrastError,
    SeparationError,
    SolverError,
    ValidationError,
)
from .implied import minvar_exact_balance_weights, mri_weights, uri_weights, weight_variance
from .matching import distance_matrix, optimal_pair_match, pair_match, profile_match
from .report import Estimate, PipelineOptions, Report, pipeline, render_report, run_methods, weighted_contrast
from .weighting import (
    SbwConfig,
    fit_propensity_logistic,
    ipw_att_weights,
    minimum_feasible_delta,
    sbw_certificate,
    sbw_solve,
)

__version__ = "0.1.0"
