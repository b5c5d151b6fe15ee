"""End-to-end runs: triangle -> fit -> reserves, MSE and criteria."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .gee import FitResult, fit
from .model import CorrelationKind, DesignBuilder, ModelSpec, VarianceFunction
from .prediction import (
    FutureCells,
    MSEResult,
    ReserveReport,
    mse_prediction,
    predict_future,
    reserve_report,
)
from .selection import CriteriaReport, criteria
from .triangle import ClusterSet, Triangle, as_incremental, to_clusters

__all__ = ["Analysis", "analyze", "compare", "STANDARD_MODELS", "sweep_threads"]


@dataclass
class Analysis:
    fit: FitResult
    fit_indep: FitResult
    future: FutureCells
    mse: Optional[MSEResult]
    criteria: CriteriaReport
    report: ReserveReport


def clusters_for(triangle: Triangle, spec: ModelSpec) -> ClusterSet:
    t = as_incremental(triangle)
    return to_clusters(t, DesignBuilder(spec.mean_structure, t.n))


def analyze(triangle: Triangle, spec: ModelSpec, tol: float = 1e-10, max_iter: int = 200,
            with_mse: bool = True, fit_indep: Optional[FitResult] = None) -> Analysis:
    """Fit ``spec`` and derive reserves, MSE of prediction and selection criteria.

    A non-converged fit still produces a report (predictions are forced);
    callers should check ``analysis.fit.converged``.
    """
    clusters = clusters_for(triangle, spec)
    result = fit(clusters, spec, tol=tol, max_iter=max_iter)
    if spec.correlation is CorrelationKind.INDEPENDENCE:
        reference = result
    elif fit_indep is not None:
        reference = fit_indep
    else:
        reference = fit(clusters, spec.with_correlation(CorrelationKind.INDEPENDENCE), tol=tol, max_iter=max_iter)
    crit = criteria(result, reference)
    future = predict_future(result, force=True)
    mse = mse_prediction(result, future) if with_mse else None
    report = reserve_report(result, future, mse, crit)
    return Analysis(result, reference, future, mse, crit, report)


STANDARD_MODELS = [
    (corr, var)
    for var in ("linear", "quadratic")
    for corr in (CorrelationKind.INDEPENDENCE, CorrelationKind.EXCHANGEABLE, CorrelationKind.AR1)
]


def sweep_threads(default: int = 6) -> int:
    """Worker count for sweeps from ``GEE_RESERVE_THREADS`` (0 means sequential)."""
    raw = os.environ.get("GEE_RESERVE_THREADS")
    if raw is None or raw.strip() == "":
        return default
    return max(0, int(raw))


def compare(triangle: Triangle, mean_structure="chain_ladder", tol: float = 1e-10, max_iter: int = 200,
            with_mse: bool = True, threads: Optional[int] = None) -> dict:
    """Fit {independence, exchangeable, AR(1)} x {linear, quadratic}.

    Returns a dict keyed by ``(correlation, variance)`` in a fixed order;
    a failed model maps to the exception it raised.
    """
    threads = sweep_threads() if threads is None else threads
    specs = {(c.short, v): ModelSpec(mean_structure, VarianceFunction(v), c) for c, v in STANDARD_MODELS}

    def run(key):
        try:
            return analyze(triangle, specs[key], tol=tol, max_iter=max_iter, with_mse=with_mse)
        except Exception as exc:  # reported inline by the caller
            return exc

    keys = list(specs)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, keys))
    else:
        results = [run(k) for k in keys]
    return dict(zip(keys, results))
