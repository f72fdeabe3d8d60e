import pytest

from mixedsim.gen import paper_limits


@pytest.fixture(scope="session")
def kinds():
    return paper_limits()


@pytest.fixture(scope="session")
def iv_limits(kinds):
    return kinds.iv


@pytest.fixture(scope="session")
def hv_limits(kinds):
    return kinds.hv
