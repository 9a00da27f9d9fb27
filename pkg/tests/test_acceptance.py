"""Acceptance criteria at full size, one test per criterion.

Each test prints a PASS/FAIL line; the lines are also repeated in the
terminal summary. The batches are shared through one module-level session,
so the whole module takes tens of minutes on a single core.
"""

import pytest

from zigzag.verify import CHECKS, Session

from .conftest import ACCEPTANCE_LINES


@pytest.fixture(scope="module")
def session():
    return Session(seed=1)


@pytest.mark.parametrize("name", list(CHECKS))
def test_criterion(session, name):
    result = CHECKS[name](session)
    line = result.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert result.passed, line
