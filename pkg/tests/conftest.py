import warnings

import numpy as np
import pytest

from gee_reserve import load_dataset
from gee_reserve.errors import ReservingWarning
from gee_reserve.pipeline import compare
from gee_reserve.triangle import as_incremental


@pytest.fixture(scope="session")
def taylor_ashe():
    return load_dataset("taylor_ashe")


@pytest.fixture(scope="session")
def abc():
    return load_dataset("abc")


def _sweep(t):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ReservingWarning)
        return compare(t, threads=0)


@pytest.fixture(scope="session")
def ta_sweep(taylor_ashe):
    return _sweep(taylor_ashe)


@pytest.fixture(scope="session")
def abc_sweep(abc):
    return _sweep(abc)


@pytest.fixture(scope="session")
def ta_values(taylor_ashe):
    return np.asarray(as_incremental(taylor_ashe).values)


@pytest.fixture(scope="session")
def abc_values(abc):
    return np.asarray(as_incremental(abc).values)
