"""GEE claims reserving on run-off triangles.

Typical use::

    from gee_reserve import load_dataset, ModelSpec, analyze
    a = analyze(load_dataset("taylor_ashe"), ModelSpec("chain_ladder", "quadratic", "ar1"))
    a.report.total_reserve, a.report.total_rmse_pct
"""
from .correlation import CorrelationStructure, estimate_dispersion, estimate_params, pearson_residuals
from .datasets import load_dataset
from .errors import *  # noqa: F401,F403
from .gee import FitResult, fit, quasi_score
from .model import (
    CorrelationKind,
    DesignBuilder,
    LogLink,
    MeanStructure,
    ModelSpec,
    VarianceFunction,
    VarianceKind,
    mean,
    mean_jacobian,
)
from .pipeline import Analysis, analyze, compare
from .prediction import extend_correlation, mse_prediction, predict_future, reserve_report
from .selection import criteria, quasi_likelihood_indep
from .simulate import SimSpec, mc_validate, simulate_triangle
from .triangle import Kind, Triangle, cumulate, decumulate, parse_triangle, read_triangle, serialize_triangle, to_clusters

__version__ = "0.1.0"
