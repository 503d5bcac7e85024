import sys
import warnings
import time
from contextlib import contextmanager
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_ACCEPTANCE_LINES = []


@contextmanager
def criterion(number: int, title: str, budget: float | None = None):
    """Record a PASS/FAIL line for one acceptance criterion.

    The body fills ``detail["msg"]``; an exception or an exceeded runtime
    budget turns the line into FAIL.
    """
    detail = {"msg": ""}
    start = time.perf_counter()
    try:
        yield detail
        elapsed = time.perf_counter() - start
        if budget is not None:
            assert elapsed < budget, f"runtime {elapsed:.1f}s exceeds {budget}s"
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        line = f"criterion {number:2d} FAIL  {title} ({elapsed:.1f}s): {type(exc).__name__}: {exc}"
        _ACCEPTANCE_LINES.append((number, line))
        print(line)
        raise
    line = f"criterion {number:2d} PASS  {title} ({elapsed:.1f}s) {detail['msg']}"
    _ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line.splitlines()[0])


@pytest.fixture(scope="session")
def n2_reference_solution():
    """The sigma2 = 1, tau2 = 9 two-agent solve on [-30, 40] with 257 nodes and GH32.

    Stopping rule: sup step <= 1e-4 within 50 iterations.
    """
    from gglab import GameParams, GridFunction, GridSpec, IntegrationScheme, compute_coefficients, solve

    params = GameParams(2, 1.0, 9.0)
    coeffs = compute_coefficients(params)
    spec = GridSpec((-30.0,), (40.0,), (257,))
    g0 = GridFunction.constant(spec, 1.5, coeffs)
    start = time.perf_counter()
    with warnings.catch_warnings():
        # the reference parameters sit outside the sufficient condition by design
        warnings.simplefilter("ignore")
        tf, diag = solve(params, IntegrationScheme.gauss_hermite(32), g0=g0, tol=1e-4, max_iter=50)
    return tf, diag, time.perf_counter() - start
