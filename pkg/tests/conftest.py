import numpy as np
import pytest

from qsvmlab import _kernels_numba, _kernels_numpy, pegasos, statevector

BACKENDS = {"numba": _kernels_numba, "numpy": _kernels_numpy}


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per kernel backend."""
    mod = BACKENDS[request.param]
    monkeypatch.setattr(statevector, "kernels", mod)
    monkeypatch.setattr(pegasos, "kernels", mod)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per exit criterion; printed in the terminal summary."""

    def report(number, title, ok, detail, status=None):
        tag = status or ("PASS" if ok else "FAIL")
        ACCEPTANCE_LINES.append(f"[{tag}] {number:>2} {title}: {detail}")
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
