import math

import numpy as np
import pytest

from zigzag.states import FieldProfile, PacketParams, build_epr_state, build_free_state, build_sg_state

R2 = 1 / math.sqrt(2)


@pytest.fixture(scope="session")
def params():
    return PacketParams()


@pytest.fixture(scope="session")
def field():
    return FieldProfile()


@pytest.fixture(scope="session")
def spin_y(params, field):
    return build_sg_state(params, field, R2, 1j * R2)


@pytest.fixture(scope="session")
def weighted(params, field):
    return build_sg_state(params, field, 3 / math.sqrt(10), 1j / math.sqrt(10))


@pytest.fixture(scope="session")
def spin_up(params, field):
    return build_sg_state(params, field, 1.0, 0.0)


@pytest.fixture(scope="session")
def free_up(params):
    return build_free_state(params, 1.0, 0.0)


@pytest.fixture(scope="session")
def epr_sg(params, field):
    return build_epr_state(params, field, True)


@pytest.fixture(scope="session")
def epr_free(params, field):
    return build_epr_state(params, field, False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
