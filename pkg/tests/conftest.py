import numpy as np
import pytest

from torflow.domain import ConformalState, FromOneForm, Grid
from torflow.meshes import genus2_mesh, icosphere, scaled, torus_mesh
from torflow.presets import exact_form, random_exact_terms, random_field


@pytest.fixture(scope="session")
def grid32():
    return Grid(32, 32)


@pytest.fixture(scope="session")
def grid64():
    return Grid(64, 64)


@pytest.fixture(scope="session")
def sphere4():
    return icosphere(4)


@pytest.fixture(scope="session")
def torus():
    return torus_mesh()


@pytest.fixture(scope="session")
def genus2_small():
    """Coarse genus-2 surface with area 8 pi (so r = -1 at u = 0)."""
    return scaled(genus2_mesh(resolution=48), 8 * np.pi)


@pytest.fixture(scope="session")
def torsion_state32(grid32):
    omega, _ = exact_form(grid32, random_exact_terms(3, n_terms=3, amplitude=0.15, max_mode=2))
    return ConformalState(grid32, random_field(grid32, 0.3, 4), FromOneForm(omega))


def smooth_mesh_field(mesh, seed=0):
    rng = np.random.default_rng(seed)
    p = mesh.vertices
    out = np.zeros(mesh.n_nodes)
    for _ in range(3):
        out += rng.uniform(-1, 1) * np.sin(p @ rng.uniform(-2, 2, 3) + rng.uniform(0, 6))
    return out


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
