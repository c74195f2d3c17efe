"""Calibrated prediction intervals for certified optimization bounds.

Given valid lower/upper bounds on an optimization objective, the package
calibrates them into short prediction intervals with finite-sample marginal
coverage, and ships a self-contained economic dispatch benchmark (synthetic
grids, an exact LP oracle, feasibility-preserving bound predictors) plus an
experiment harness reporting coverage and normalized interval length.
"""

__version__ = "0.1.0"

from .intervals import (
    BoundedSample,
    CalibratedModel,
    Interval,
    NestedFamily,
    OffsetFamily,
    StrengthenedFamily,
    calibrate,
    empirical_quantile,
    min_covering_t,
    predict,
    selection_coverage_bound,
    strengthen,
)
from .methods import (
    CPUL_VARIANTS,
    METHOD_NAMES,
    CpulModel,
    OmltModel,
    ResidualQuantiles,
    cpul_fit,
    cpul_residual_quantiles,
    cqr_fit,
    cqr_r_fit,
    fit_method,
    method_predict,
    omlt_fit,
    omlt_wrap,
    sfd_fit,
    split_cp_fit,
)
from .lp import LpResult, lp_solve
from .dispatch import (
    DualSolution,
    GridCase,
    LoadSample,
    PrimalSolution,
    build_case,
    compute_ptdf,
    dual_objective,
    primal_objective,
    sample_loads,
    solve_dispatch,
)
from .proxies import (
    DualProxy,
    LinearPredictor,
    PrimalProxy,
    dual_recover,
    fit_ridge,
    make_bounded_samples,
    power_balance,
    primal_recover,
)
from .harness import (
    ExperimentConfig,
    MethodResult,
    MethodSpec,
    emit_results,
    generate_pool,
    normalized_length,
    picp,
    run_experiment,
)
