import numpy as np
import pytest

from simdprop.patterns import generate_patterns
from simdprop.topology import layered, parse_topology

ELMAN_TEXT = """\
layer input 3
layer context 4
layer hidden 4
layer output 2
connect input hidden
connect context hidden
connect hidden output
copy hidden[0] context[0]
copy hidden[1] context[1]
copy hidden[2] context[2]
copy hidden[3] context[3]
"""


@pytest.fixture
def net432():
    return layered(4, 3, 2)


@pytest.fixture
def net12():
    return layered(12, 12, 12)


@pytest.fixture
def elman():
    return parse_topology(ELMAN_TEXT)


@pytest.fixture
def data432():
    return generate_patterns(4, 2, 16, seed=11).astype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
