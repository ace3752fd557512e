import sys

import numpy as np
import pytest

from dprp import _kernels
from dprp.tensor import precision


@pytest.fixture(autouse=True)
def engine64(request):
    """Oracle and property tests run the engine in 64-bit mode."""
    if request.node.get_closest_marker("fp32"):
        with precision(32):
            yield
    else:
        with precision(64):
            yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numba", "numpy"])
def kernel_backend(request):
    old = _kernels.use_numba()
    if request.param == "numba" and not _kernels.NUMBA_AVAILABLE:
        pytest.skip("numba not importable")
    _kernels.use_numba(request.param == "numba")
    yield request.param
    _kernels.use_numba(old)


def pytest_configure(config):
    config.addinivalue_line("markers", "fp32: run with the engine in 32-bit mode")
    config.addinivalue_line("markers", "slow: desk-scale training runs")
    config.addinivalue_line("markers", "acceptance: numbered acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.VERDICTS):
        for ok, detail in mod.VERDICTS[n]:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
