import pytest

from authds import hashcore as hc

T0 = 1_700_000_000


@pytest.fixture(scope="session")
def keys():
    return hc.KeyPair.generate()


@pytest.fixture(scope="session")
def other_keys():
    return hc.KeyPair.generate()
