import numpy as np
import pytest

from ludor.nn import make_rng

FD_STEP = 1e-5
FD_RTOL = 1e-4


def numeric_grad(f, x, h=FD_STEP):
    """Central differences of the scalar function ``f`` at the flat vector ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def assert_grad_close(analytic, numeric, rtol=FD_RTOL):
    err = rel_error(analytic, numeric)
    assert err < rtol, f"relative gradient error {err:.2e}"


@pytest.fixture
def rng():
    return make_rng(1234, 0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.LINES):
        terminalreporter.write_line(line)
