"""QIC, QIC_HH, CIC and CIC_HH for GEE fits.

Traces use the independence information scaled by the inverse dispersion,
i.e. the inverse of the naive covariance an independence fit would report,
so ``CIC`` is close to ``p`` when the working model is right.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import MismatchedModels, NonPositiveMean
from .gee import FitResult, _effective_phi
from .model import CorrelationKind, VarianceFunction, VarianceKind

__all__ = ["CriteriaReport", "quasi_likelihood_indep", "omega_independence", "criteria"]


@dataclass(frozen=True)
class CriteriaReport:
    q_indep: float
    qic: float
    qic_hh: float
    cic: float
    cic_hh: float

    def as_dict(self) -> dict:
        return asdict(self)


def _flat(values) -> np.ndarray:
    if isinstance(values, (list, tuple)):
        return np.concatenate([np.atleast_1d(np.asarray(v, dtype=float)) for v in values])
    return np.atleast_1d(np.asarray(values, dtype=float))


def quasi_likelihood_indep(x, mu, variance: VarianceFunction) -> float:
    """Unscaled independence quasi-likelihood ``sum q(x; mu)``.

    ``q = x log mu - mu`` (linear), ``-(x/mu + log mu)`` (quadratic) and
    ``mu^(1-k) (x/(1-k) - mu/(2-k))`` for power ``k``.
    """
    x, mu = _flat(x), _flat(mu)
    if np.any(~(mu > 0)):
        raise NonPositiveMean("quasi-likelihood needs positive means")
    if variance.kind is VarianceKind.LINEAR:
        q = x * np.log(mu) - mu
    elif variance.kind is VarianceKind.QUADRATIC:
        q = -(x / mu + np.log(mu))
    else:
        k = variance.power_exponent
        q = mu ** (1.0 - k) * (x / (1.0 - k) - mu / (2.0 - k))
    return float(np.sum(q))


def omega_independence(fit: FitResult, theta=None) -> np.ndarray:
    """``sum_i D_i' A_i^-1 D_i`` at ``theta`` (default: the fit's estimate), unscaled."""
    theta = fit.theta if theta is None else np.asarray(theta, dtype=float)
    spec = fit.spec
    omega = np.zeros((len(theta), len(theta)))
    for c in fit.clusters:
        eta = c.z @ theta
        mu = spec.link.inverse(eta)
        D = spec.link.inverse_derivative(eta)[:, None] * c.z
        omega += D.T @ (D / spec.variance(mu)[:, None])
    return (omega + omega.T) / 2.0


def _check_pair(fit: FitResult, fit_indep: FitResult) -> None:
    if fit_indep.spec.correlation is not CorrelationKind.INDEPENDENCE:
        raise MismatchedModels("reference fit must use the independence working correlation")
    a, b = fit.spec, fit_indep.spec
    if (a.mean_structure, a.variance, a.link) != (b.mean_structure, b.variance, b.link):
        raise MismatchedModels("fits differ in mean structure, link or variance function")
    ca, cb = fit.clusters, fit_indep.clusters
    if ca is cb:
        return
    if ca.n != cb.n or any(not np.array_equal(x.x, y.x) for x, y in zip(ca, cb)):
        raise MismatchedModels("fits were made on different data")


def criteria(fit: FitResult, fit_indep: FitResult) -> CriteriaReport:
    """Selection criteria for ``fit`` against its independence counterpart.

    ``Q`` is evaluated at ``fit``'s own estimate. The CIC trace uses the
    independence information at ``fit.theta`` divided by ``fit.phi``; the
    CIC_HH trace uses it at ``fit_indep.theta`` divided by ``fit_indep.phi``.
    """
    _check_pair(fit, fit_indep)
    q = quasi_likelihood_indep([c.x for c in fit.clusters], fit.mu, fit.spec.variance)
    sigma = fit.cov_sandwich
    cic = float(np.trace(omega_independence(fit) @ sigma)) / _effective_phi(fit.phi)
    cic_hh = float(np.trace(omega_independence(fit_indep) @ sigma)) / _effective_phi(fit_indep.phi)
    return CriteriaReport(q_indep=q, qic=-2.0 * q + 2.0 * cic, qic_hh=-2.0 * q + 2.0 * cic_hh, cic=cic, cic_hh=cic_hh)
