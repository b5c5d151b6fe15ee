import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gee_reserve.errors import DuplicateCell, NonNumericValue, RaggedShape, WrongKind
from gee_reserve.model import DesignBuilder
from gee_reserve.triangle import (
    Kind,
    Triangle,
    cumulate,
    decumulate,
    observed_mask,
    parse_triangle,
    serialize_triangle,
    to_clusters,
)


def _square(rows):
    n = len(rows)
    arr = np.full((n, n), np.nan)
    for i, r in enumerate(rows):
        arr[i, : len(r)] = r
    return arr


@st.composite
def triangles(draw, min_n=1, max_n=7):
    n = draw(st.integers(min_n, max_n))
    vals = draw(st.lists(st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
                         min_size=n * (n + 1) // 2, max_size=n * (n + 1) // 2))
    arr = np.full((n, n), np.nan)
    arr[observed_mask(n)] = vals
    return Triangle(arr)


def test_smallest_long_triangle():
    t = parse_triangle("i,j,value\n1,1,10\n1,2,5\n2,1,8", format="long")
    assert t.n == 2 and t.kind is Kind.INCREMENTAL
    assert t[1, 1] == 10 and t[1, 2] == 5 and t[2, 1] == 8


def test_fixture_shape(taylor_ashe):
    assert taylor_ashe.n == 10
    assert len(list(taylor_ashe.cells())) == 55
    assert taylor_ashe[1, 1] == 357848 and taylor_ashe[10, 1] == 344014


def test_long_cell_outside_triangle():
    rows = [f"{i},{j},1" for i in range(1, 11) for j in range(1, 12 - i)] + ["2,10,1"]
    with pytest.raises(RaggedShape):
        parse_triangle("i,j,value\n" + "\n".join(rows), format="long")


def test_long_duplicate():
    with pytest.raises(DuplicateCell):
        parse_triangle("i,j,value\n1,1,10\n1,1,11\n1,2,5\n2,1,8", format="long")


def test_non_numeric():
    with pytest.raises(NonNumericValue):
        parse_triangle("1,2\nabc\n", format="wide")
    with pytest.raises(NonNumericValue):
        parse_triangle("i,j,value\n1,1,x\n", format="long")


def test_wide_ragged_row():
    with pytest.raises(RaggedShape):
        parse_triangle("1,2,3\n4,5,6\n7", format="wide")
    with pytest.raises(RaggedShape):
        parse_triangle("1,2\n", format="wide")


def test_wide_label_column_and_header():
    t = parse_triangle("year,dev_1,dev_2\n2001,10,5\n2002,8,\n")
    assert np.array_equal(t.values, _square([[10, 5], [8]]), equal_nan=True)
    # header without a label column
    t2 = parse_triangle("dev_1,dev_2\n10,5\n8\n")
    assert t == t2


def test_empty_input():
    with pytest.raises(RaggedShape):
        parse_triangle("")


def test_negative_and_zero_cells_accepted():
    t = parse_triangle("1,-2\n0\n")
    assert t[1, 2] == -2 and t[2, 1] == 0


def test_cumulate_rows():
    t = Triangle(_square([[10, 5, 2], [3, 4], [8]]))
    c = cumulate(t)
    assert c.kind is Kind.CUMULATIVE
    assert list(c.row(1)) == [10, 15, 17]
    assert list(c.row(3)) == [8]


def test_kind_checks():
    t = Triangle(_square([[1, 2], [3]]))
    with pytest.raises(WrongKind):
        decumulate(t)
    with pytest.raises(WrongKind):
        cumulate(cumulate(t))
    with pytest.raises(WrongKind):
        to_clusters(cumulate(t), DesignBuilder("chain_ladder", 2))


@settings(max_examples=60, deadline=None)
@given(triangles(min_n=6, max_n=6))
def test_cumulate_roundtrip(t):
    back = decumulate(cumulate(t))
    m = observed_mask(t.n)
    scale = np.maximum(1.0, np.abs(np.cumsum(np.nan_to_num(t.values), axis=1)))
    assert np.all(np.abs(back.values[m] - t.values[m]) <= 8 * np.finfo(float).eps * scale[m])


@settings(max_examples=60, deadline=None)
@given(triangles(), st.sampled_from(["wide", "long"]))
def test_serialize_roundtrip(t, fmt):
    assert parse_triangle(serialize_triangle(t, fmt), format=fmt) == t


@settings(max_examples=30, deadline=None)
@given(triangles())
def test_cluster_count(t):
    cs = to_clusters(t, DesignBuilder("chain_ladder", t.n))
    assert cs.n_obs == t.n * (t.n + 1) // 2
    assert cs.sizes == list(range(t.n, 0, -1))


def test_cluster_layout(taylor_ashe):
    b = DesignBuilder("chain_ladder", 10)
    cs = to_clusters(taylor_ashe, b)
    assert len(cs) == 10 and cs.n_obs == 55
    for c in cs:
        for pos, (i, j) in enumerate(c.cells):
            assert c.x[pos] == taylor_ashe[i, j]
            assert np.array_equal(c.z[pos], b.row(i, j))
    two = to_clusters(Triangle(_square([[1, 2], [3]])), DesignBuilder("chain_ladder", 2))
    assert two.sizes == [2, 1]


def test_immutable(taylor_ashe):
    with pytest.raises(ValueError):
        taylor_ashe.values[0, 0] = 1.0


def test_stream_sources():
    text = "i,j,value\n1,1,10\n1,2,5\n2,1,8"
    assert parse_triangle(io.StringIO(text), format="long") == parse_triangle(text.encode(), format="long")
