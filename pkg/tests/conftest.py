import pytest

from sgpdf.fem import build_mesh
from sgpdf.kl import CovarianceSpec, build_kl_field


@pytest.fixture(scope="session")
def mesh3():
    return build_mesh(3)


@pytest.fixture(scope="session")
def field_factory():
    cache = {}

    def make(sigma, level=3, N=2, method="gauss"):
        key = (sigma, level, N, method)
        if key not in cache:
            cache[key] = build_kl_field(build_mesh(level), CovarianceSpec(sigma), N=N, covariance_method=method)
        return cache[key]

    return make


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """``acceptance(cid, ok, detail)`` records one criterion line, then asserts it."""

    def record(cid, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {cid}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
