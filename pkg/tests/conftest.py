"""Shared fixtures. The default-size simulations are session-scoped because
building the 200 x 200 projector and the non-linear data takes seconds."""

import numpy as np
import pytest

from cst.forward import add_noise, compton_forward
from cst.grid import GridSpec, ScanGeometry, rasterize
from cst.phantom import builtin_phantom
from cst.physics import PhysicsParams
from cst.postproc import true_support
from cst.recon import fbp_lambda, landweber, tv_reconstruct

NOISE_SEED = 7
GAMMA = 0.01


@pytest.fixture(scope="session")
def default_geom():
    return ScanGeometry()


@pytest.fixture(scope="session")
def nonconvex_spec():
    return builtin_phantom("non_convex")


@pytest.fixture(scope="session")
def nonconvex_image(nonconvex_spec):
    return rasterize(nonconvex_spec, 200)


@pytest.fixture(scope="session")
def nonconvex_truth(nonconvex_spec):
    return true_support(nonconvex_spec, GridSpec(200, 200))


@pytest.fixture(scope="session")
def nonconvex_clean(nonconvex_image, default_geom):
    return compton_forward(nonconvex_image, default_geom, PhysicsParams())


@pytest.fixture(scope="session")
def nonconvex_noisy(nonconvex_clean):
    return add_noise(nonconvex_clean, GAMMA, NOISE_SEED)


@pytest.fixture(scope="session")
def reconstructions(nonconvex_noisy):
    """Default-setting reconstructions of the noisy non-convex data, keyed by method."""
    return {"fbp": fbp_lambda(nonconvex_noisy),
            "landweber": landweber(nonconvex_noisy),
            "tv": tv_reconstruct(nonconvex_noisy)}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, title, passed, detail)``."""
    store = request.config.stash.setdefault(_CRITERIA, {})

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        store[number] = (title, bool(passed), detail)
        print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CRITERIA, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        title, passed, detail = store[number]
        terminalreporter.write_line(f"{number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
