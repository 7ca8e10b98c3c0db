import pytest
from hypothesis import HealthCheck, settings

from contact_hj import PeriodicGrid, builtin

settings.register_profile("contact", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("contact")


@pytest.fixture(scope="session")
def grid200():
    return PeriodicGrid(1, 200)


@pytest.fixture(scope="session")
def classical():
    return builtin("classical", {})


@pytest.fixture(scope="session")
def discounted():
    return builtin("discounted", {})


@pytest.fixture(scope="session")
def mechanical():
    return builtin("mechanical", {})
