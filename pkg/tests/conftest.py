import math

import pytest

from mtsmv import MarketModel, ProblemSpec

R, B, SIGMA = 0.04, 0.12, 0.2
BETA = ((B - R) / SIGMA) ** 2


@pytest.fixture(scope="session")
def paper_market():
    return MarketModel.constant(2.0, R, [B], [[SIGMA]])


@pytest.fixture(scope="session")
def paper_spec(paper_market):
    return ProblemSpec(paper_market, (0.0, 1.0, 2.0), 1.0, (math.exp(2.1 * R), math.exp(5 * R)))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
