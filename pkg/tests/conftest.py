import pytest

from targetcost.ode import shoot


@pytest.fixture(scope="session")
def shot_p2():
    return shoot(2.0)


@pytest.fixture(scope="session")
def curve_p2(shot_p2):
    return shot_p2.curve


@pytest.fixture(scope="session")
def shots_all():
    return {p: shoot(p) for p in (1.5, 2.0, 3.0)}
