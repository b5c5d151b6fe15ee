"""Quasi-score solver with alternating moment updates and sandwich covariance."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .correlation import (
    PD_TOL,
    CorrelationStructure,
    _raw_matrix,
    estimate_dispersion,
    estimate_params,
    pearson_residuals,
)
from .errors import (
    DivergedFit,
    NotPositiveDefinite,
    ReservingWarning,
    SingularB,
    SingularWorkingCovariance,
)
from .model import CorrelationKind, DesignBuilder, ModelSpec
from .triangle import ClusterSet

__all__ = [
    "FitResult",
    "ClusterTerms",
    "working_correlation",
    "working_covariance",
    "cluster_terms",
    "quasi_score",
    "information",
    "fit",
    "sandwich",
    "model_based_cov",
    "COND_LIMIT",
]

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
SINGULAR_EIG = 1e-4


def _regularised(structure: CorrelationStructure, k: int, strict: bool, notes: Optional[list]):
    """Working correlation of size ``k`` and its inverse, from one eigendecomposition."""
    mat = _raw_matrix(structure, k)
    if k == 1 or structure.kind is CorrelationKind.INDEPENDENCE or not np.any(structure.params):
        return mat, np.eye(k)
    eig, vec = np.linalg.eigh(mat)
    if eig.min() > PD_TOL:
        return mat, (vec / eig) @ vec.T
    if strict:
        raise NotPositiveDefinite(f"{structure.kind.value} working correlation of size {k} is not positive definite "
                                  f"(smallest eigenvalue {eig.min():.4g})")
    if notes is None:
        notes = []
    if np.abs(eig).min() < SINGULAR_EIG:
        msg = f"{structure.kind.value} working correlation of size {k} is numerically singular; regularised"
        if msg not in notes:
            notes.append(msg)
        small = np.abs(eig) < SINGULAR_EIG
        eig = np.where(small, np.where(eig < 0, -SINGULAR_EIG, SINGULAR_EIG), eig)
        mat = (vec * eig) @ vec.T
        mat = (mat + mat.T) / 2.0
    if eig.min() < 0:
        msg = f"{structure.kind.value} working correlation of size {k} is indefinite; used as-is"
        if msg not in notes:
            notes.append(msg)
    inv = (vec / eig) @ vec.T
    return mat, (inv + inv.T) / 2.0


def working_correlation(structure: CorrelationStructure, k: int, strict: bool = True, notes: Optional[list] = None) -> np.ndarray:
    """Correlation block for a cluster of size ``k``.

    With ``strict=False`` an indefinite matrix is accepted and a note is
    appended to ``notes``. Eigenvalues closer to zero than ``SINGULAR_EIG``
    are moved out to +/-``SINGULAR_EIG`` so the inverse stays finite; the
    fitted quantities then approximate the limit as the matrix approaches
    singularity.
    """
    return _regularised(structure, k, strict, notes)[0]


def working_covariance(mu: np.ndarray, spec: ModelSpec, phi: float, corr: np.ndarray) -> np.ndarray:
    """``V = phi * A^1/2 C A^1/2`` with ``A = diag h(mu)``."""
    a = np.sqrt(spec.variance(mu))
    return phi * a[:, None] * corr * a[None, :]


@dataclass
class ClusterTerms:
    """Per-cluster pieces evaluated at one ``(theta, phi, vartheta)``."""

    mu: np.ndarray
    D: np.ndarray
    V_inv: np.ndarray
    resid: np.ndarray

    @property
    def DtVinv(self) -> np.ndarray:
        return self.D.T @ self.V_inv


def cluster_terms(clusters: ClusterSet, theta, phi: float, structure: CorrelationStructure, spec: ModelSpec,
                  notes: Optional[list] = None) -> list[ClusterTerms]:
    if not (np.isfinite(phi) and phi > 0):
        raise SingularWorkingCovariance(f"dispersion {phi!r} gives a singular working covariance")
    theta = np.asarray(theta, dtype=np.float64)
    out = []
    for c in clusters:
        eta = c.z @ theta
        mu = spec.link.inverse(eta)
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise DivergedFit(f"non-finite or non-positive fitted mean in accident year {c.i}")
        D = spec.link.inverse_derivative(eta)[:, None] * c.z
        _, c_inv = _regularised(structure, c.size, spec.strict_pd, notes)
        a_inv = 1.0 / np.sqrt(spec.variance(mu))
        V_inv = (a_inv[:, None] * c_inv * a_inv[None, :]) / phi
        out.append(ClusterTerms(mu, D, V_inv, c.x - mu))
    return out


def quasi_score(clusters: ClusterSet, theta, phi: float, vartheta, spec: ModelSpec) -> np.ndarray:
    """``u = sum_i D_i' V_i^-1 (X_i - mu_i)``."""
    structure = _structure(spec, vartheta, clusters.n)
    terms = cluster_terms(clusters, theta, phi, structure, spec)
    return sum(t.DtVinv @ t.resid for t in terms)


def information(terms: Sequence[ClusterTerms]) -> np.ndarray:
    """``B = sum_i D_i' V_i^-1 D_i``, symmetrised."""
    B = sum(t.DtVinv @ t.D for t in terms)
    return (B + B.T) / 2.0


def _middle(terms: Sequence[ClusterTerms]) -> np.ndarray:
    S = 0.0
    for t in terms:
        g = t.DtVinv @ t.resid
        S = S + np.outer(g, g)
    return S


def invert_information(B: np.ndarray, notes: Optional[list] = None) -> np.ndarray:
    """Inverse of a symmetric information matrix via an equilibrated eigendecomposition.

    Raises SingularB when the equilibrated condition number exceeds
    ``COND_LIMIT``. An indefinite ``B`` (possible with an indefinite working
    correlation) is inverted anyway and noted.
    """
    d = np.sqrt(np.abs(np.diag(B)))
    if not np.all(np.isfinite(B)) or np.any(d == 0):
        raise SingularB("information matrix has a zero or non-finite diagonal")
    scaled = B / d[:, None] / d[None, :]
    w, Q = np.linalg.eigh(scaled)
    aw = np.abs(w)
    if aw.min() == 0 or aw.max() / aw.min() > COND_LIMIT:
        cond = np.inf if aw.min() == 0 else aw.max() / aw.min()
        raise SingularB(f"information matrix is singular or ill-conditioned (condition {cond:.3g})")
    if w.min() < 0 and notes is not None:
        msg = "information matrix B is indefinite; model-based covariance is not positive definite"
        if msg not in notes:
            notes.append(msg)
    inv = (Q / w) @ Q.T
    inv = inv / d[:, None] / d[None, :]
    return (inv + inv.T) / 2.0


def _structure(spec: ModelSpec, vartheta, n: int) -> CorrelationStructure:
    return CorrelationStructure(spec.correlation, tuple(np.atleast_1d(vartheta)) if len(np.atleast_1d(vartheta)) else (),
                                spec.m, n)


@dataclass
class FitResult:
    """Converged (or last) state of a GEE fit.

    ``mu`` and ``residuals`` are lists aligned with ``clusters``;
    ``residuals`` are Pearson residuals.
    """

    spec: ModelSpec
    clusters: ClusterSet
    theta: np.ndarray
    phi: float
    vartheta: np.ndarray
    cov_sandwich: np.ndarray
    cov_model: np.ndarray
    mu: list
    residuals: list
    iterations: int
    converged: bool
    score_norm: float
    step_norm: float
    warnings: list = field(default_factory=list)

    @property
    def builder(self) -> DesignBuilder:
        return self.clusters.design

    @property
    def structure(self) -> CorrelationStructure:
        return _structure(self.spec, self.vartheta, self.clusters.n)

    @property
    def p(self) -> int:
        return len(self.theta)

    def terms(self) -> list[ClusterTerms]:
        """Per-cluster pieces at the estimates (at ``phi = 1`` if the fit interpolates)."""
        return cluster_terms(self.clusters, self.theta, _effective_phi(self.phi), self.structure, self.spec, notes=[])

    def with_vartheta(self, vartheta) -> "FitResult":
        """Same theta and phi, different correlation parameters; covariances recomputed."""
        out = replace(self, vartheta=np.asarray(vartheta, dtype=float), warnings=list(self.warnings))
        terms = out.terms()
        B_inv = invert_information(information(terms))
        out.cov_sandwich = _sandwich_from(terms, B_inv)
        out.cov_model = B_inv if self.phi > 0 else np.zeros_like(B_inv)
        return out


def _effective_phi(phi: float) -> float:
    # u, the scoring step, H and the sandwich are all invariant to phi, so an
    # interpolating fit (phi = 0) is evaluated at phi = 1; only B^-1 = phi * B_1^-1
    # and the process variance actually vanish.
    return 1.0 if phi == 0.0 else phi


def _sandwich_from(terms, B_inv: np.ndarray) -> np.ndarray:
    sig = B_inv @ _middle(terms) @ B_inv
    return (sig + sig.T) / 2.0


def sandwich(fit_state: FitResult) -> np.ndarray:
    """Robust covariance ``B^-1 S B^-1`` recomputed from the fit's stored state."""
    terms = fit_state.terms()
    return _sandwich_from(terms, invert_information(information(terms)))


def model_based_cov(fit_state: FitResult) -> np.ndarray:
    """Naive covariance ``B^-1`` at the fit's estimates."""
    B_inv = invert_information(information(fit_state.terms()))
    return B_inv if fit_state.phi > 0 else np.zeros_like(B_inv)


def _moments(clusters: ClusterSet, spec: ModelSpec, mu: list) -> tuple[float, np.ndarray, list]:
    resid = pearson_residuals([c.x for c in clusters], mu, spec.variance)
    p = clusters.p if spec.df_correction else 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ReservingWarning)
        phi = estimate_dispersion(resid, p).phi
        if spec.correlation is CorrelationKind.INDEPENDENCE or phi == 0.0:
            vartheta = np.zeros(0 if spec.correlation is CorrelationKind.INDEPENDENCE else
                                _structure_size(spec, clusters.n))
        else:
            method = "lag1" if spec.df_correction else "pairs"
            vartheta = estimate_params(resid, spec.correlation, phi, p=p, m=spec.m,
                                       max_size=clusters.n, method=method)
    return phi, vartheta, resid


def _structure_size(spec: ModelSpec, n: int) -> int:
    from .correlation import n_params
    return n_params(spec.correlation, spec.m, n)


def _means(clusters: ClusterSet, spec: ModelSpec, theta) -> list:
    out = []
    for c in clusters:
        mu = spec.link.inverse(c.z @ theta)
        if not np.all(np.isfinite(mu)):
            raise DivergedFit(f"non-finite fitted mean in accident year {c.i}")
        out.append(mu)
    return out


def _scoring(clusters, spec, theta, phi, structure, notes):
    terms = cluster_terms(clusters, theta, phi, structure, spec, notes)
    B = information(terms)
    u = sum(t.DtVinv @ t.resid for t in terms)
    step = invert_information(B) @ u
    return step, u


def initial_theta(clusters: ClusterSet, spec: ModelSpec, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Independence (GLM) fit started from least squares on log(max(x, 1e-3 * mean x))."""
    Z = np.vstack([c.z for c in clusters])
    x = np.concatenate([c.x for c in clusters])
    floor = 1e-3 * abs(float(np.mean(x))) or 1e-3
    theta = np.linalg.lstsq(Z, np.log(np.maximum(x, floor)), rcond=None)[0]
    indep = spec.with_correlation(CorrelationKind.INDEPENDENCE)
    ident = CorrelationStructure.zero(CorrelationKind.INDEPENDENCE, max_size=clusters.n)
    for _ in range(max_iter):
        step, _ = _scoring(clusters, indep, theta, 1.0, ident, None)
        theta = theta + step
        if not np.all(np.isfinite(theta)):
            raise DivergedFit("independence start diverged")
        if np.max(np.abs(step)) < tol:
            break
    return theta


def fit(clusters: ClusterSet, spec: ModelSpec, tol: float = 1e-10, max_iter: int = 200,
        theta_init: Optional[Sequence[float]] = None) -> FitResult:
    """Solve ``u(theta) = 0`` by Fisher scoring, re-estimating (phi, vartheta) after every step.

    Iteration stops once the sup-norm of the Fisher-scoring step drops below
    ``tol``. A fit that hits ``max_iter`` is returned with ``converged=False``.

    Raises
    ------
    SingularB, DivergedFit, NotPositiveDefinite
    """
    notes: list[str] = []
    if theta_init is None:
        theta = initial_theta(clusters, spec, tol=tol, max_iter=max_iter)
    else:
        theta = np.array(theta_init, dtype=np.float64)
        if theta.shape != (clusters.p,):
            raise ValueError(f"theta_init must have length {clusters.p}")

    converged = False
    step_norm = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        phi, vartheta, _ = _moments(clusters, spec, _means(clusters, spec, theta))
        structure = _structure(spec, vartheta, clusters.n)
        step, _ = _scoring(clusters, spec, theta, _effective_phi(phi), structure, notes)
        theta = theta + step
        if not np.all(np.isfinite(theta)):
            raise DivergedFit("non-finite parameter estimate")
        step_norm = float(np.max(np.abs(step)))
        if step_norm < tol:
            converged = True
            break

    mu = _means(clusters, spec, theta)
    phi, vartheta, resid = _moments(clusters, spec, mu)
    structure = _structure(spec, vartheta, clusters.n)
    terms = cluster_terms(clusters, theta, _effective_phi(phi), structure, spec, notes)
    B_inv = invert_information(information(terms), notes)
    u = sum(t.DtVinv @ t.resid for t in terms)
    if not converged:
        notes.append(f"no convergence after {max_iter} iterations (last step {step_norm:.3g})")
        log.warning("GEE fit %s did not converge", spec.label)
    if phi == 0.0:
        notes.append("dispersion estimate is zero: the model interpolates the data")
    return FitResult(
        spec=spec,
        clusters=clusters,
        theta=theta,
        phi=phi,
        vartheta=np.asarray(vartheta, dtype=float),
        cov_sandwich=_sandwich_from(terms, B_inv),
        cov_model=B_inv if phi > 0 else np.zeros_like(B_inv),
        mu=mu,
        residuals=resid,
        iterations=iterations,
        converged=converged,
        score_norm=float(np.max(np.abs(u))),
        step_norm=step_norm,
        warnings=notes,
    )
