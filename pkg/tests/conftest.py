import numpy as np
import pytest

from svfed import _backend
from svfed.data import breast_cancer_dataset, minmax_normalize


@pytest.fixture(params=sorted(_backend.LOOPS))
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def breast():
    ds, _ = minmax_normalize(breast_cancer_dataset())
    return ds


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
