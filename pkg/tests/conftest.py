import sys

import numpy as np
import pytest

from scgnet import tensor as T


@pytest.fixture(autouse=True)
def float64_default():
    prev = T.DEFAULT_DTYPE
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.pytest_terminal_summary_lines():
        terminalreporter.write_line(line)
