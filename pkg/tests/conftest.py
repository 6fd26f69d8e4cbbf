import math

import numpy as np
import pytest

from concavelift.spaces import Cone, Euclidean, Product

CONE_ALPHA = 1.5 * math.pi


@pytest.fixture
def cone():
    return Cone(CONE_ALPHA)


@pytest.fixture
def plane():
    return Euclidean(2)


@pytest.fixture
def product():
    return Product(1, CONE_ALPHA)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
