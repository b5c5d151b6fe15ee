"""Reserve prediction and its mean square error of prediction.

For accident year ``i`` the future block ``X_i^f`` (development years
``n+2-i .. n``) is predicted by ``exp(z' theta_hat)``. Its MSE matrix is

    phi A_f^1/2 C_f A_f^1/2
    - 2 phi A_f^1/2 C_fp A_i^1/2 H_ii'
    + D_f Sigma D_f'

with ``H_ii = D_f B^-1 D_i' V_i^-1``, ``C_f``/``C_fp`` the future-future and
future-past blocks of the correlation over all ``n`` development years, and
``Sigma`` the sandwich covariance. Reserve MSEs are ``1' M 1``; accident
years are independent so totals are plain sums.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .correlation import CorrelationStructure, _raw_matrix, build_matrix
from .errors import (
    DimensionMismatch,
    NotConverged,
    ReservingWarning,
    UnsupportedStructureForPrediction,
)
from .gee import FitResult
from .model import CorrelationKind
from .selection import CriteriaReport

__all__ = [
    "FutureYear",
    "FutureCells",
    "ExtendedCorrelation",
    "MSEResult",
    "YearReserve",
    "ReserveReport",
    "predict_future",
    "extend_correlation",
    "mse_prediction",
    "reserve_report",
]


@dataclass(frozen=True, eq=False)
class FutureYear:
    i: int
    cells: tuple[tuple[int, int], ...]
    mean: np.ndarray
    jacobian: np.ndarray

    @property
    def reserve(self) -> float:
        return float(self.mean.sum())


@dataclass(frozen=True, eq=False)
class FutureCells:
    n: int
    years: tuple[FutureYear, ...]

    def __iter__(self):
        return iter(self.years)

    def year(self, i: int) -> FutureYear:
        return self.years[i - 2]


def predict_future(fit: FitResult, builder=None, force: bool = False) -> FutureCells:
    """Plug-in predictions and Jacobian rows for every unobserved cell.

    Raises NotConverged for a non-converged fit unless ``force`` is set.
    """
    if not fit.converged and not force:
        raise NotConverged("refusing to predict from a non-converged fit (pass force=True to override)")
    builder = fit.builder if builder is None else builder
    n = builder.n
    link = fit.spec.link
    years = []
    for i in range(2, n + 1):
        cells = tuple(builder.future_cells(i))
        z = builder.matrix(cells)
        eta = z @ fit.theta
        years.append(FutureYear(i, cells, link.inverse(eta), link.inverse_derivative(eta)[:, None] * z))
    return FutureCells(n, tuple(years))


@dataclass(frozen=True, eq=False)
class ExtendedCorrelation:
    """Correlation over all ``n`` development years of accident year ``i``, split into blocks."""

    i: int
    full: np.ndarray
    future_past: np.ndarray
    future: np.ndarray

    @property
    def past(self) -> np.ndarray:
        k = self.full.shape[0] + 1 - self.i
        return self.full[:k, :k]


_TRANSLATION_INVARIANT = (
    CorrelationKind.INDEPENDENCE,
    CorrelationKind.EXCHANGEABLE,
    CorrelationKind.AR1,
    CorrelationKind.M_DEPENDENT,
)


def extend_correlation(structure: CorrelationStructure, n: int, i: int, strict: bool = True) -> ExtendedCorrelation:
    """Blocks of the full-development correlation for accident year ``i`` (2..n).

    ``strict=False`` skips the positive-definiteness check, matching a fit
    that accepted an indefinite working correlation.
    """
    if structure.kind not in _TRANSLATION_INVARIANT:
        raise UnsupportedStructureForPrediction(
            f"future correlations of the {structure.kind.value} structure are not defined; "
            "use a translation-invariant structure or skip the MSE")
    if not 2 <= i <= n:
        raise ValueError(f"accident year {i} has no future cells in a triangle of size {n}")
    full = build_matrix(structure, n) if strict else _raw_matrix(structure, n)
    k = n + 1 - i
    return ExtendedCorrelation(i, full, full[k:, :k].copy(), full[k:, k:].copy())


@dataclass
class MSEResult:
    per_year: dict
    matrices: dict
    total: float
    warnings: list = field(default_factory=list)

    def symmetrized(self, i: int) -> np.ndarray:
        m = self.matrices[i]
        return (m + m.T) / 2.0


def mse_prediction(fit: FitResult, future: FutureCells,
                   ext: Optional[Sequence[ExtendedCorrelation]] = None) -> MSEResult:
    """Per-accident-year and total MSE of the predicted reserves.

    ``ext`` defaults to :func:`extend_correlation` of the fit's structure for
    every accident year. Negative MSEs are kept and reported in ``warnings``.
    """
    structure = fit.structure
    n = future.n
    if ext is None:
        ext = [extend_correlation(structure, n, i, strict=fit.spec.strict_pd) for i in range(2, n + 1)]
    ext_by_year = {e.i: e for e in ext}
    terms = {c.i: t for c, t in zip(fit.clusters, fit.terms())}
    B_inv = fit.cov_model
    sigma = fit.cov_sandwich
    phi = fit.phi
    h = fit.spec.variance

    per_year, matrices, notes = {}, {}, []
    for fy in future:
        i = fy.i
        e = ext_by_year.get(i)
        past = terms[i]
        k_f, k_p = len(fy.mean), len(past.mu)
        if e is None or e.future.shape != (k_f, k_f) or e.future_past.shape != (k_f, k_p):
            raise DimensionMismatch(f"correlation blocks for accident year {i} do not match {k_f} future / {k_p} past cells")
        a_f = np.sqrt(h(fy.mean))
        a_p = np.sqrt(h(past.mu))
        D_f = fy.jacobian
        H = D_f @ B_inv @ past.D.T @ past.V_inv
        process = phi * a_f[:, None] * e.future * a_f[None, :]
        cross = 2.0 * phi * (a_f[:, None] * e.future_past * a_p[None, :]) @ H.T
        estimation = D_f @ sigma @ D_f.T
        M = process - cross + estimation
        matrices[i] = M
        per_year[i] = float(np.sum(M))
        if per_year[i] <= 0:
            notes.append(f"non-positive MSE estimate for accident year {i}: {per_year[i]:.6g}")
    if notes:
        for msg in notes:
            warnings.warn(msg, ReservingWarning, stacklevel=2)
    return MSEResult(per_year, matrices, float(sum(per_year.values())), notes)


@dataclass(frozen=True)
class YearReserve:
    i: int
    reserve: float
    mse: float
    rmse_pct: Optional[float]


def _rmse_pct(mse: float, reserve: float) -> Optional[float]:
    if reserve == 0 or mse < 0 or not math.isfinite(mse):
        return None
    return 100.0 * math.sqrt(mse) / reserve


@dataclass
class ReserveReport:
    model: dict
    years: list
    total_reserve: float
    total_mse: Optional[float]
    criteria: Optional[CriteriaReport] = None
    warnings: list = field(default_factory=list)

    @property
    def total_rmse_pct(self) -> Optional[float]:
        return None if self.total_mse is None else _rmse_pct(self.total_mse, self.total_reserve)

    def reserves(self) -> dict:
        return {y.i: y.reserve for y in self.years}


def reserve_report(fit: FitResult, future: FutureCells, mse: Optional[MSEResult] = None,
                   criteria: Optional[CriteriaReport] = None) -> ReserveReport:
    """Assemble reserves, MSEs and criteria; accident year 1 carries zeros."""
    years = []
    if future.n >= 1:
        years.append(YearReserve(1, 0.0, 0.0 if mse is not None else None, None))
    for fy in future:
        r = fy.reserve
        m = None if mse is None else mse.per_year[fy.i]
        years.append(YearReserve(fy.i, r, m, None if m is None else _rmse_pct(m, r)))
    if future.n <= 1:
        years = []
    total = float(sum(y.reserve for y in years))
    total_mse = None if mse is None else float(sum(y.mse for y in years))
    notes = list(fit.warnings) + ([] if mse is None else list(mse.warnings))
    return ReserveReport(
        model={
            "mean": fit.spec.mean_structure.value,
            "variance": fit.spec.variance.kind.value,
            "power": fit.spec.variance.power_exponent if fit.spec.variance.kind.value == "power" else None,
            "correlation": fit.spec.correlation.value,
            "m": fit.spec.m if fit.spec.correlation is CorrelationKind.M_DEPENDENT else None,
            "link": fit.spec.link.kind,
            "n": future.n,
        },
        years=years,
        total_reserve=total,
        total_mse=total_mse,
        criteria=criteria,
        warnings=notes,
    )
