import numpy as np
import pytest

FD_STEP = 1e-5
FD_RTOL = 1e-4


def central_difference(f, param, step=FD_STEP):
    """Numerical gradient of scalar f() w.r.t. every entry of ``param`` (modified in place)."""
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = param[idx]
        param[idx] = orig + step
        up = f()
        param[idx] = orig - step
        down = f()
        param[idx] = orig
        grad[idx] = (up - down) / (2 * step)
    return grad


def assert_grad_close(analytic, numeric, rtol=FD_RTOL):
    """Elementwise |a - n| <= rtol * max(|a|, |n|, rtol)."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), rtol)
    worst = np.max(np.abs(analytic - numeric) / scale) if analytic.size else 0.0
    assert worst <= rtol, f"finite-difference mismatch {worst:.3g}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def record(criterion, status, detail):
    ACCEPTANCE_LINES.append(f"[{status}] criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
