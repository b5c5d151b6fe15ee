import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gee_reserve.errors import IndexOutOfRange
from gee_reserve.model import (
    CorrelationKind,
    DesignBuilder,
    LogLink,
    MeanStructure,
    ModelSpec,
    VarianceFunction,
    design_row,
    mean,
    mean_jacobian,
)

from oracles import cl_design, finite_difference_jacobian

LOG = LogLink()


def test_chain_ladder_rows():
    b = DesignBuilder("chain_ladder", 3)
    assert b.p == 5
    assert list(design_row(b, 1, 1)) == [1, 0, 0, 0, 0]
    assert list(design_row(b, 2, 3)) == [1, 1, 0, 0, 1]
    assert b.parameter_names == ["gamma", "alpha_2", "alpha_3", "beta_2", "beta_3"]


def test_hoerl_row_verbatim():
    b = DesignBuilder("hoerl", 3)
    assert b.p == 7
    np.testing.assert_array_equal(design_row(b, 1, 2), [1, 0, 0, 2, 0, np.log(2), 0])


def test_hoerl_curve_row():
    b = DesignBuilder("hoerl_curve", 4)
    assert b.p == 6
    np.testing.assert_array_equal(b.row(3, 4), [1, 0, 1, 0, 4, np.log(4)])


@pytest.mark.parametrize("i,j", [(0, 1), (1, 0), (4, 1), (1, 4)])
def test_index_out_of_range(i, j):
    with pytest.raises(IndexOutOfRange):
        DesignBuilder("chain_ladder", 3).row(i, j)


@pytest.mark.parametrize("n", range(2, 12))
def test_full_column_rank(n):
    b = DesignBuilder("chain_ladder", n)
    Z = b.matrix(b.observed_cells())
    assert np.linalg.matrix_rank(Z) == 2 * n - 1
    # independent construction of the same design
    _, X = cl_design(n)
    np.testing.assert_array_equal(Z, X)


def test_mean_examples():
    b = DesignBuilder("chain_ladder", 4)
    assert np.all(mean(b, LOG, np.zeros(b.p)) == 1.0)
    theta = np.zeros(b.p)
    theta[0], theta[1] = np.log(100), np.log(2)
    assert mean(b, LOG, theta, [(2, 1)])[0] == pytest.approx(200.0, rel=1e-14)


def test_jacobian_examples():
    b = DesignBuilder("chain_ladder", 4)
    cells = b.observed_cells()
    np.testing.assert_array_equal(mean_jacobian(b, LOG, np.zeros(b.p), cells), b.matrix(cells))
    theta = np.linspace(-0.5, 0.5, b.p)
    row = mean_jacobian(b, LOG, theta, [(1, 1)])[0]
    assert row[0] == pytest.approx(np.exp(theta[0])) and not np.any(row[1:])


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["chain_ladder", "hoerl", "hoerl_curve"]), st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_jacobian_finite_differences(structure, n, seed):
    b = DesignBuilder(structure, n)
    theta = np.random.default_rng(seed).normal(0, 0.5, b.p)
    cells = b.observed_cells() + [c for i in range(2, n + 1) for c in b.future_cells(i)]
    analytic = mean_jacobian(b, LOG, theta, cells)
    fd = finite_difference_jacobian(lambda t: mean(b, LOG, t, cells), theta)
    scale = np.maximum(np.abs(analytic), 1e-300)
    mask = analytic != 0
    assert np.all(np.abs(fd[~mask]) < 1e-12)
    assert np.max(np.abs(fd[mask] - analytic[mask]) / scale[mask]) < 1e-6


def test_variance_functions():
    mu = np.array([0.5, 2.0, 9.0])
    np.testing.assert_array_equal(VarianceFunction("linear")(mu), mu)
    np.testing.assert_array_equal(VarianceFunction("quadratic")(mu), mu**2)
    np.testing.assert_allclose(VarianceFunction("power")(mu), mu**1.5)
    assert VarianceFunction("power", 1.2).exponent == 1.2
    with pytest.raises(ValueError):
        VarianceFunction("power", 2.5)


def test_model_spec_coercion():
    s = ModelSpec("chain-ladder", "quadratic", "exch")
    assert s.mean_structure is MeanStructure.CHAIN_LADDER
    assert s.correlation is CorrelationKind.EXCHANGEABLE
    assert s.label == "chain_ladder/exch/quadratic"
    assert s.with_correlation("ind").correlation is CorrelationKind.INDEPENDENCE
    with pytest.raises(ValueError):
        ModelSpec(correlation="mdep", m=0)
