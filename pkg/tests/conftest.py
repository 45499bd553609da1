import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dart.geometry import build_direction_grid, subdivide
from dart.precompute import precompute
from dart.scenes import box_mesh, facing_triangles

settings.register_profile(
    "dart", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("dart")

# lines reported by the acceptance suite, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cube_pre():
    """Unit cube, 96 patches, 4 x 4 directions, M = 4096."""
    return precompute(subdivide(box_mesh((1.0, 1.0, 1.0)), 0.5), build_direction_grid(4, 4),
                      K=16, M=4096, M_geometry=10000, seed=1)


@pytest.fixture(scope="session")
def small_cube_pre():
    """3 m cube with one cell per face (24 patches) for quick transport tests."""
    return precompute(subdivide(box_mesh((3.0, 3.0, 3.0)), 3.0), build_direction_grid(4, 4),
                      K=9, M=512, M_geometry=4096, seed=2)


@pytest.fixture(scope="session")
def pair_pre():
    """Two facing triangles with a 2 x 2 direction grid (four bins)."""
    return precompute(facing_triangles(), build_direction_grid(2, 2), K=9, M=64,
                      M_geometry=400, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
