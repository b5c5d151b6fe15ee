import warnings
from dataclasses import replace

import numpy as np
import pytest

from gee_reserve.correlation import CorrelationStructure
from gee_reserve.errors import NotPositiveDefinite, ReservingWarning, SingularB, SingularWorkingCovariance
from gee_reserve.gee import (
    fit,
    model_based_cov,
    quasi_score,
    sandwich,
    working_correlation,
)
from gee_reserve.model import DesignBuilder, ModelSpec
from gee_reserve.pipeline import clusters_for
from gee_reserve.triangle import Cluster, ClusterSet, Triangle, to_clusters

from oracles import irls_glm

VARIANCE_POWER = {"linear": 1, "quadratic": 2}


def quiet_fit(clusters, spec, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ReservingWarning)
        return fit(clusters, spec, **kw)


@pytest.mark.parametrize("variance", ["linear", "quadratic"])
def test_independence_matches_glm(ta_sweep, ta_values, variance):
    f = ta_sweep[("ind", variance)].fit
    beta, mu, phi, _, _ = irls_glm(ta_values, VARIANCE_POWER[variance])
    np.testing.assert_allclose(f.theta, beta, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(np.concatenate(f.mu), mu, rtol=1e-6)
    assert f.phi == pytest.approx(phi, rel=1e-6)


def test_model_cov_matches_glm_information(ta_sweep, ta_values):
    f = ta_sweep[("ind", "quadratic")].fit
    beta, mu, phi, _, X = irls_glm(ta_values, 2)
    fisher = X.T @ (X * (mu**2 / mu**2)[:, None])
    np.testing.assert_allclose(f.cov_model, phi * np.linalg.inv(fisher), rtol=1e-6, atol=1e-12)


def test_score_zero_at_perfect_fit():
    b = DesignBuilder("chain_ladder", 4)
    theta = np.linspace(1.0, 2.0, b.p)
    t = np.full((4, 4), np.nan)
    for i, j in b.observed_cells():
        t[i - 1, j - 1] = np.exp(b.row(i, j) @ theta)
    cs = to_clusters(Triangle(t), b)
    for kind, v in [("independence", ()), ("ar1", (0.3,)), ("exchangeable", (0.2,))]:
        u = quasi_score(cs, theta, 1.0, v, ModelSpec("chain_ladder", "linear", kind))
        assert np.max(np.abs(u)) < 1e-9 * np.max(np.abs(np.concatenate([c.x for c in cs])))


def test_independence_score_is_poisson_score(taylor_ashe):
    spec = ModelSpec("chain_ladder", "linear", "independence")
    cs = clusters_for(taylor_ashe, spec)
    theta = np.full(cs.p, 0.1)
    theta[0] = 11.0
    u = quasi_score(cs, theta, 2.5, (), spec)
    Z = np.vstack([c.z for c in cs])
    x = np.concatenate([c.x for c in cs])
    glm = Z.T @ (x - np.exp(Z @ theta))
    np.testing.assert_allclose(u * 2.5, glm, rtol=1e-10)
    np.testing.assert_allclose(quasi_score(cs, theta, 5.0, (), spec), u / 2, rtol=1e-12)


def test_fit_examples(ta_sweep):
    r = ta_sweep[("ind", "linear")].report
    assert [round(y.reserve / 1000) for y in r.years[1:]] == [95, 470, 710, 985, 1419, 2178, 3920, 4279, 4626]
    assert round(ta_sweep[("ar1", "quadratic")].report.total_reserve / 1000) == 17870


def test_sandwich_zero_on_perfect_fit():
    b = DesignBuilder("chain_ladder", 3)
    theta = np.array([2.0, 0.3, -0.2, 0.5, 0.1])
    t = np.full((3, 3), np.nan)
    for i, j in b.observed_cells():
        t[i - 1, j - 1] = np.exp(b.row(i, j) @ theta)
    f = quiet_fit(to_clusters(Triangle(t), b), ModelSpec("chain_ladder", "linear", "ar1"), theta_init=theta)
    assert np.allclose(sandwich(f), 0.0, atol=1e-18)


def test_one_dimensional_hand_check():
    # p = 1: one single-cell cluster, intercept-only design, linear h.
    # B = D^2 / V = mu / phi, S = (D (x - mu) / V)^2, so B^-1 = phi / mu and
    # Sigma = (x - mu)^2 / mu^2 whatever phi is.
    cs = ClusterSet((Cluster(1, np.array([5.0]), np.array([[1.0]])),), 1)
    spec = ModelSpec("chain_ladder", "linear", "independence")
    f = quiet_fit(cs, spec, theta_init=[np.log(4.0)])
    assert f.theta[0] == pytest.approx(np.log(5.0))
    assert f.phi == pytest.approx(0.0, abs=1e-25)
    state = replace(f, theta=np.array([np.log(4.0)]), phi=2.0)
    assert model_based_cov(state)[0, 0] == pytest.approx(2.0 / 4.0)
    assert sandwich(state)[0, 0] == pytest.approx((5.0 - 4.0) ** 2 / 4.0**2)


def test_fixture_convergence(ta_sweep, abc_sweep):
    for sweep in (ta_sweep, abc_sweep):
        for key, a in sweep.items():
            f = a.fit
            assert f.converged, key
            assert f.score_norm < 1e-6 * (1 + np.max(np.abs(f.theta))), key


def test_covariances_symmetric_psd(ta_sweep):
    for key, a in ta_sweep.items():
        for cov in (a.fit.cov_sandwich,):
            assert np.array_equal(cov, cov.T)
            assert np.linalg.eigvalsh(cov).min() > -1e-9 * np.abs(cov).max(), key


def test_sandwich_recomputed_from_state(ta_sweep):
    f = ta_sweep[("ar1", "linear")].fit
    np.testing.assert_allclose(sandwich(f), f.cov_sandwich, rtol=1e-12, atol=0)
    np.testing.assert_allclose(model_based_cov(f), f.cov_model, rtol=1e-12, atol=0)
    # independent assembly of B^-1 S B^-1 from stored residuals
    terms = f.terms()
    B = sum(t.D.T @ t.V_inv @ t.D for t in terms)
    S = sum(np.outer(t.D.T @ t.V_inv @ t.resid, t.D.T @ t.V_inv @ t.resid) for t in terms)
    Binv = np.linalg.inv(B)
    np.testing.assert_allclose(f.cov_sandwich, Binv @ S @ Binv, rtol=1e-8, atol=1e-12 * np.abs(f.cov_sandwich).max())


def test_permutation_invariance(taylor_ashe):
    spec = ModelSpec("chain_ladder", "quadratic", "ar1")
    cs = clusters_for(taylor_ashe, spec)
    a = quiet_fit(cs, spec)
    b = quiet_fit(cs.permuted([3, 0, 9, 5, 1, 8, 2, 7, 4, 6]), spec)
    np.testing.assert_allclose(a.theta, b.theta, rtol=1e-8)


@pytest.mark.parametrize("kind", ["independence", "ar1", "exchangeable"])
def test_scale_equivariance(taylor_ashe, kind):
    spec = ModelSpec("chain_ladder", "quadratic", kind)
    cs = clusters_for(taylor_ashe, spec)
    a = quiet_fit(cs, spec)
    b = quiet_fit(cs.scaled(1000.0), spec)
    assert b.theta[0] - a.theta[0] == pytest.approx(np.log(1000.0), rel=1e-9)
    np.testing.assert_allclose(b.theta[1:], a.theta[1:], rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(b.vartheta, a.vartheta, rtol=1e-7, atol=1e-9)


def test_non_converged_fit_is_returned(taylor_ashe):
    spec = ModelSpec("chain_ladder", "linear", "ar1")
    f = quiet_fit(clusters_for(taylor_ashe, spec), spec, max_iter=2)
    assert not f.converged and f.iterations == 2
    assert any("no convergence" in w for w in f.warnings)


def test_hoerl_verbatim_design_is_singular(taylor_ashe):
    spec = ModelSpec("hoerl", "linear", "independence")
    with pytest.raises(SingularB):
        quiet_fit(clusters_for(taylor_ashe, spec), spec)


def test_hoerl_curve_fits(taylor_ashe):
    spec = ModelSpec("hoerl_curve", "quadratic", "ar1")
    f = quiet_fit(clusters_for(taylor_ashe, spec), spec)
    assert f.converged and f.p == 12


def test_strict_pd_rejects_indefinite():
    s = CorrelationStructure("exchangeable", (-0.2,), max_size=10)
    with pytest.raises(NotPositiveDefinite):
        working_correlation(s, 10, strict=True)
    notes = []
    mat = working_correlation(s, 10, strict=False, notes=notes)
    assert np.array_equal(mat, mat.T) and notes


def test_strict_fit_on_fixture(taylor_ashe):
    spec = ModelSpec("chain_ladder", "linear", "exchangeable", strict_pd=True)
    with pytest.raises(NotPositiveDefinite):
        quiet_fit(clusters_for(taylor_ashe, spec), spec)


def test_zero_dispersion_rejected():
    cs = ClusterSet((Cluster(1, np.array([5.0]), np.array([[1.0]])),), 1)
    with pytest.raises(SingularWorkingCovariance):
        quasi_score(cs, [1.0], 0.0, (), ModelSpec())
