import warnings

import numpy as np
import pytest

from tarma.evaluation import BENCHMARK_CASES
from tarma.model import InnovationSpec, simulate


@pytest.fixture(autouse=True)
def _quiet_invertibility_warnings():
    # fitted MA coefficients near the sufficient-condition boundary warn;
    # tests assert on results, not warnings, unless they opt in explicitly
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield


@pytest.fixture
def case1():
    return BENCHMARK_CASES[1]


@pytest.fixture
def case2():
    return BENCHMARK_CASES[2]


def make_series(case_id: int, n: int, seed: int, burn_in: int = 500):
    rng = np.random.default_rng(seed)
    return simulate(BENCHMARK_CASES[case_id], n, InnovationSpec(),
                    burn_in=burn_in, rng=rng)
