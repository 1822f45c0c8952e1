"""Semiparametric transformation-model regression for censored data.

Fits proportional-hazards / proportional-odds (and pluggable) hazard
families to right-censored samples, and reports grouped conditional
quantiles with pointwise and simultaneous multiplier-calibrated
confidence sets.
"""

from .bands import (
    BandResult,
    MultiplierDraw,
    critical_value,
    make_draw,
    multiplier_process,
    multiplier_w0,
    simultaneous_bands,
)
from .errors import (
    ConvergenceError,
    EstimationDomainError,
    InputError,
    QuantsurvError,
    SingularityError,
)
from .estimator import FitConfig, ScoreFit, covariance_matrices, fit, score_vector
from .families import (
    HazardFamily,
    ProportionalHazards,
    ProportionalOdds,
    get_family,
)
from .fredholm import (
    FredholmSolution,
    build_system,
    fredholm_residual,
    solve_phi,
    solve_weight,
)
from .quantiles import (
    GroupCurves,
    Partition,
    QuantileCurve,
    auxiliary_functions,
    default_p_grid,
    get_transform,
    group_cdf,
    group_curves,
    pointwise_ci,
    quantile_curve,
    variance_curve,
)
from .simulate import (
    Censoring,
    CoverageReport,
    DiscreteCovariates,
    PowerTransformation,
    SimScenario,
    UniformCovariates,
    generate,
    run_coverage,
    true_quantile,
)
from .transform import (
    SurvivalSample,
    TransformEstimate,
    accumulate_cb,
    estimate_transform,
    product_integral,
    solve_gamma,
    solve_gamma_dot,
)

__version__ = "0.1.0"

__all__ = [
    "BandResult",
    "Censoring",
    "ConvergenceError",
    "CoverageReport",
    "DiscreteCovariates",
    "EstimationDomainError",
    "FitConfig",
    "FredholmSolution",
    "GroupCurves",
    "HazardFamily",
    "InputError",
    "MultiplierDraw",
    "Partition",
    "PowerTransformation",
    "ProportionalHazards",
    "ProportionalOdds",
    "QuantileCurve",
    "QuantsurvError",
    "ScoreFit",
    "SimScenario",
    "SingularityError",
    "SurvivalSample",
    "TransformEstimate",
    "UniformCovariates",
    "accumulate_cb",
    "auxiliary_functions",
    "build_system",
    "covariance_matrices",
    "critical_value",
    "default_p_grid",
    "estimate_transform",
    "fit",
    "fredholm_residual",
    "generate",
    "get_family",
    "get_transform",
    "group_cdf",
    "group_curves",
    "make_draw",
    "multiplier_process",
    "multiplier_w0",
    "pointwise_ci",
    "product_integral",
    "quantile_curve",
    "run_coverage",
    "score_vector",
    "simultaneous_bands",
    "solve_gamma",
    "solve_gamma_dot",
    "solve_phi",
    "solve_weight",
    "true_quantile",
    "variance_curve",
]
