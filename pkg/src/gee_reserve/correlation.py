"""Working correlation structures and moment estimation of (phi, vartheta).

Residuals are passed around as a list of 1-D arrays, one per accident-year
cluster, in development-year order.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import (
    DegenerateFit,
    InsufficientPairs,
    NonPositiveMean,
    NotPositiveDefinite,
    ReservingWarning,
)
from .model import CorrelationKind, VarianceFunction

__all__ = [
    "CorrelationStructure",
    "DispersionEstimate",
    "build_matrix",
    "check_positive_definite",
    "pearson_residuals",
    "estimate_dispersion",
    "estimate_params",
    "CLIP",
    "PD_TOL",
]

CLIP = 0.99
PD_TOL = 1e-10


def n_params(kind: CorrelationKind, m: int, max_size: int) -> int:
    kind = CorrelationKind.coerce(kind)
    if kind is CorrelationKind.INDEPENDENCE:
        return 0
    if kind is CorrelationKind.M_DEPENDENT:
        return m
    if kind is CorrelationKind.UNSTRUCTURED:
        return max_size * (max_size - 1) // 2
    return 1


def unstructured_index(j: int, k: int, max_size: int) -> int:
    """Position of the 1-based pair ``j < k`` in the row-major upper triangle."""
    if j > k:
        j, k = k, j
    return (j - 1) * max_size - (j - 1) * j // 2 + (k - j - 1)


@dataclass(frozen=True)
class CorrelationStructure:
    """A working correlation family with its current parameter vector."""

    kind: CorrelationKind
    params: tuple[float, ...] = ()
    m: int = 1
    max_size: int = 1

    def __post_init__(self):
        kind = CorrelationKind.coerce(self.kind)
        object.__setattr__(self, "kind", kind)
        params = tuple(float(v) for v in np.atleast_1d(np.asarray(self.params, dtype=float)))
        object.__setattr__(self, "params", params)
        expected = n_params(kind, self.m, self.max_size)
        if len(params) != expected:
            raise ValueError(f"{kind.value} needs {expected} parameters, got {len(params)}")
        if kind in (CorrelationKind.EXCHANGEABLE, CorrelationKind.AR1, CorrelationKind.M_DEPENDENT):
            if any(abs(v) >= 1 for v in params):
                raise ValueError("correlation parameters must lie strictly inside (-1, 1)")

    @classmethod
    def zero(cls, kind, m: int = 1, max_size: int = 1) -> "CorrelationStructure":
        kind = CorrelationKind.coerce(kind)
        return cls(kind, (0.0,) * n_params(kind, m, max_size), m, max_size)

    def with_params(self, params) -> "CorrelationStructure":
        return CorrelationStructure(self.kind, tuple(params), self.m, self.max_size)

    def matrix(self, k: int) -> np.ndarray:
        return build_matrix(self, k)


def _raw_matrix(s: CorrelationStructure, k: int) -> np.ndarray:
    idx = np.arange(k)
    lag = np.abs(idx[:, None] - idx[None, :])
    kind = s.kind
    if kind is CorrelationKind.INDEPENDENCE:
        return np.eye(k)
    if kind is CorrelationKind.EXCHANGEABLE:
        return np.where(lag == 0, 1.0, s.params[0])
    if kind is CorrelationKind.AR1:
        return np.power(s.params[0], lag.astype(float))
    if kind is CorrelationKind.M_DEPENDENT:
        table = np.zeros(k)
        table[0] = 1.0
        top = min(s.m, k - 1)
        table[1 : top + 1] = s.params[:top]
        return table[lag]
    out = np.eye(k)
    for a in range(k):
        for b in range(a + 1, k):
            out[a, b] = out[b, a] = s.params[unstructured_index(a + 1, b + 1, s.max_size)]
    return out


def check_positive_definite(mat: np.ndarray, what: str = "matrix") -> None:
    if mat.size and np.linalg.eigvalsh(mat).min() <= PD_TOL:
        raise NotPositiveDefinite(f"{what} is not positive definite")


def build_matrix(structure: CorrelationStructure, k: int) -> np.ndarray:
    """``k x k`` working correlation matrix; validated to be symmetric PD.

    Raises
    ------
    NotPositiveDefinite
        If the smallest eigenvalue is at most ``1e-10``.
    """
    if k < 1 or (structure.kind is CorrelationKind.UNSTRUCTURED and k > structure.max_size):
        raise ValueError(f"size {k} out of range for {structure.kind.value}")
    mat = _raw_matrix(structure, k)
    check_positive_definite(mat, f"{structure.kind.value} correlation matrix (size {k})")
    return mat


def pearson_residuals(x: Sequence[np.ndarray], mu: Sequence[np.ndarray], variance: VarianceFunction) -> list[np.ndarray]:
    """``(x - mu) / sqrt(h(mu))`` cluster by cluster."""
    out = []
    for xi, mi in zip(x, mu):
        mi = np.asarray(mi, dtype=np.float64)
        if np.any(~(mi > 0)):
            raise NonPositiveMean("fitted means must be positive")
        out.append((np.asarray(xi, dtype=np.float64) - mi) / np.sqrt(variance(mi)))
    return out


@dataclass(frozen=True)
class DispersionEstimate:
    phi: float
    denominator: int


def estimate_dispersion(residuals: Sequence[np.ndarray], p: int = 0) -> DispersionEstimate:
    """Moment estimate ``sum r^2 / (N - p)`` of the dispersion.

    The fitter calls this with ``p=0`` unless the model asks for a
    degrees-of-freedom correction.
    """
    n_obs = sum(len(r) for r in residuals)
    denom = n_obs - p
    if denom <= 0:
        raise DegenerateFit(f"N={n_obs} observations do not exceed p={p} parameters")
    phi = float(sum(float(np.dot(r, r)) for r in residuals)) / denom
    if phi == 0.0:
        warnings.warn("dispersion estimate is zero: the model interpolates the data", ReservingWarning, stacklevel=2)
    return DispersionEstimate(phi, denom)


def _denominator(count: float, p: int, what: str) -> float:
    if count - p > 0:
        return count - p
    if p > 0 and count > 0:
        warnings.warn(f"{what}: pair count {count} does not exceed p={p}; using the uncorrected count",
                      ReservingWarning, stacklevel=3)
        return count
    raise InsufficientPairs(f"{what}: no within-cluster pairs available")


def _lag_sums(residuals, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
    sums = np.zeros(max_lag + 1)
    counts = np.zeros(max_lag + 1)
    for r in residuals:
        for lag in range(1, min(max_lag, len(r) - 1) + 1):
            sums[lag] += float(np.dot(r[:-lag], r[lag:]))
            counts[lag] += len(r) - lag
    return sums, counts


def _ar1_least_squares(residuals, phi: float) -> float:
    """Least-squares fit of ``rho**lag`` to all within-cluster residual products.

    Minimises ``sum over pairs (r_j r_k / phi - rho**|j-k|)**2`` on
    ``[-CLIP, CLIP]``: coarse grid for the global basin, then a root of the
    gradient (or bounded minimisation when the bracket has no sign change).
    """
    max_lag = max(len(r) for r in residuals) - 1
    sums, counts = _lag_sums(residuals, max_lag)
    if counts[1:].sum() == 0:
        raise InsufficientPairs("ar1: no within-cluster pairs available")
    lags = np.arange(1, max_lag + 1)
    s, c = sums[1:] / phi, counts[1:]

    def objective(rho):
        powers = np.power(rho, lags)
        return float(np.sum(c * powers * powers - 2.0 * s * powers))

    def gradient(rho):
        powers = np.power(rho, lags)
        dpowers = lags * np.power(rho, lags - 1)
        return float(np.sum(2.0 * (c * powers - s) * dpowers))

    grid = np.linspace(-CLIP, CLIP, 397)
    gp = np.power(grid[:, None], lags[None, :])
    values = (gp * gp) @ c - 2.0 * (gp @ s)
    best = int(np.argmin(values))
    step = grid[1] - grid[0]
    lo, hi = max(-CLIP, grid[best] - step), min(CLIP, grid[best] + step)
    g_lo, g_hi = gradient(lo), gradient(hi)
    if g_lo < 0 < g_hi:
        # interior minimum: the stationary point is resolved to machine precision
        rho = brentq(gradient, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    else:
        res = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
        rho = float(res.x)
    if objective(rho) > values[best]:
        rho = float(grid[best])
    return float(rho)


def estimate_params(
    residuals: Sequence[np.ndarray],
    kind,
    phi: float,
    p: int = 0,
    m: int = 1,
    max_size: int | None = None,
    method: str = "pairs",
) -> np.ndarray:
    """Moment estimate of the correlation parameters.

    Parameters
    ----------
    residuals : list of arrays
        Pearson residuals per cluster.
    kind : CorrelationKind or str
    phi : float
        Dispersion estimate; products are standardised as ``r_j r_k / phi``.
    p : int
        Subtracted from every pair count (0 disables the correction).
    m : int
        Order of the m-dependent structure.
    max_size : int, optional
        Largest cluster size (defaults to the longest residual vector).
    method : {"pairs", "lag1"}
        AR(1) only. ``pairs`` fits ``rho**lag`` to all within-cluster pairs by
        least squares (ignores ``p``); ``lag1`` averages lag-one products.

    Returns
    -------
    numpy.ndarray
        Parameters clipped to ``[-0.99, 0.99]``; empty for independence.
    """
    kind = CorrelationKind.coerce(kind)
    if kind is CorrelationKind.INDEPENDENCE:
        return np.zeros(0)
    if not phi > 0:
        raise DegenerateFit("correlation estimation needs a positive dispersion")
    if max_size is None:
        max_size = max(len(r) for r in residuals)

    if kind is CorrelationKind.EXCHANGEABLE:
        total = 0.0
        pairs = 0
        for r in residuals:
            s = float(r.sum())
            total += (s * s - float(np.dot(r, r))) / 2.0
            pairs += len(r) * (len(r) - 1) // 2
        est = np.array([total / (phi * _denominator(pairs, p, "exchangeable"))])
    elif kind is CorrelationKind.AR1:
        if method == "pairs":
            est = np.array([_ar1_least_squares(residuals, phi)])
        elif method == "lag1":
            sums, counts = _lag_sums(residuals, 1)
            est = np.array([sums[1] / (phi * _denominator(counts[1], p, "ar1"))])
        else:
            raise ValueError(f"unknown ar1 method {method!r}")
    elif kind is CorrelationKind.M_DEPENDENT:
        if m > max_size - 1:
            raise InsufficientPairs(f"m={m} exceeds the largest available lag {max_size - 1}")
        sums, counts = _lag_sums(residuals, m)
        est = np.array([sums[l] / (phi * _denominator(counts[l], p, f"m-dependent lag {l}")) for l in range(1, m + 1)])
    else:
        est = np.zeros(max_size * (max_size - 1) // 2)
        sparse = []
        for j in range(1, max_size + 1):
            for k in range(j + 1, max_size + 1):
                contrib = [r[j - 1] * r[k - 1] for r in residuals if len(r) >= k]
                if len(contrib) < 3:
                    sparse.append((j, k))
                denom = _denominator(len(contrib), p, f"unstructured pair ({j},{k})")
                est[unstructured_index(j, k, max_size)] = sum(contrib) / (phi * denom)
        if sparse:
            warnings.warn(f"unstructured correlation: pairs with fewer than 3 contributing clusters: {sparse}",
                          ReservingWarning, stacklevel=2)
    return np.clip(est, -CLIP, CLIP)
