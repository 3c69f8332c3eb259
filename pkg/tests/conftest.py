import pytest

from octaflow import bolza_atlas, field_from_bumps

BUMP_CENTER = 0.2 + 0.1j


@pytest.fixture(scope="session")
def atlas():
    return bolza_atlas()


@pytest.fixture(scope="session")
def zero_field(atlas):
    return field_from_bumps(atlas, [], [], 0.5)


@pytest.fixture(scope="session")
def bump_field(atlas):
    return field_from_bumps(atlas, [BUMP_CENTER], [0.1], 0.5)
