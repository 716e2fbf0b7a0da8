import contextlib

import numpy as np
import pytest

from minenav import _kernels_py, kernels
from minenav.localization import build_ndt_grid
from minenav.sim.scenarios import mine_spec
from minenav.sim.survey import survey_map
from minenav.sim.world import WorldSpec, generate_world

KERNEL_NAMES = ("cast_rays", "ndt_derivatives", "segments_visible", "points_inside")


def available_backends():
    out = {"python": _kernels_py}
    try:
        from minenav import _kernels
    except ImportError:
        pass
    else:
        out["cython"] = _kernels
    return out


@contextlib.contextmanager
def kernel_backend(impl):
    """Route every kernel call through ``impl`` for the duration."""
    saved = {n: getattr(kernels, n) for n in KERNEL_NAMES}
    try:
        for n in KERNEL_NAMES:
            setattr(kernels, n, getattr(impl, n))
        yield
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)


@pytest.fixture(scope="session")
def mine_world_spec():
    return WorldSpec.from_dict(mine_spec())


@pytest.fixture(scope="session")
def mine_world(mine_world_spec):
    return generate_world(mine_world_spec)


@pytest.fixture(scope="session")
def mine_map(mine_world, mine_world_spec):
    return survey_map(mine_world, mine_world_spec)


@pytest.fixture(scope="session")
def mine_grid(mine_map):
    return build_ndt_grid(mine_map)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
