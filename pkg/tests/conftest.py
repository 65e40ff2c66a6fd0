from fractions import Fraction
from pathlib import Path

import pytest

from orpsim.catalog import Pool, builtin_catalog

FIXTURES = Path(__file__).parent / "fixtures"


def exact_reward(probs, i, a):
    """Reward update in exact rational arithmetic."""
    p = [Fraction(x) for x in probs]
    a = Fraction(a)
    return [pj + a * (1 - pj) if j == i else pj - a * pj for j, pj in enumerate(p)]


def exact_penalize(probs, i, b):
    p = [Fraction(x) for x in probs]
    b = Fraction(b)
    r = len(p)
    return [(1 - b) * pj if j == i else b / (r - 1) + (1 - b) * pj for j, pj in enumerate(p)]


@pytest.fixture
def catalog():
    return builtin_catalog()


@pytest.fixture
def one_of_each_pool(catalog):
    """One instance of every catalog type, ids in catalog order."""
    return Pool.from_types(catalog)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# Acceptance tests append (label, passed, detail) here; printed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {label}: {detail}")
