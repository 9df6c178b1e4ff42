import pytest

from dualsec import fixtures


@pytest.fixture(scope="session")
def aes_fixture():
    return fixtures.toy_aes(key=0x2B)


@pytest.fixture(scope="session")
def aes_bundle(aes_fixture):
    bundle, report = fixtures.build_bundle("toy-aes", aes_fixture.source)
    return bundle, report, aes_fixture.meta


@pytest.fixture(scope="session")
def aes_sweep_bundle():
    fx = fixtures.toy_aes(balanced=False)
    bundle, report = fixtures.build_bundle("toy-aes-sweep", fx.source)
    return bundle, report, fx.meta


@pytest.fixture(scope="session")
def des_bundle():
    fx = fixtures.toy_des(key=0x9, lr=(0x5, 0xA))
    bundle, report = fixtures.build_bundle("toy-des", fx.source)
    return bundle, report, fx.meta


@pytest.fixture(scope="session")
def filler_bundle():
    fx = fixtures.filler(n_iters=120, base=0x8000)
    bundle, report = fixtures.build_bundle("filler", fx.source)
    return bundle, report, fx.meta
