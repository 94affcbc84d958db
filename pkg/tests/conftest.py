import numpy as np
import pytest

from railwave.nn import tensor

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(autouse=True)
def _finite_checks():
    tensor.CHECK_FINITE = True
    yield
    tensor.CHECK_FINITE = False


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Print and record one PASS/FAIL line, then assert."""

    def report(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
