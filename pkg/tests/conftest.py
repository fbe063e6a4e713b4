import numpy as np
import pytest

from manigrad.experiments import load_bunny
from manigrad.mesh_core import TriangleMesh, assemble_laplacian, icosphere
from manigrad.spectral import compute_spectrum


@pytest.fixture
def triangle():
    return TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


@pytest.fixture
def square():
    # unit square split along the (0,0)-(1,1) diagonal
    return TriangleMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])


@pytest.fixture(scope="session")
def ico3():
    return icosphere(3)


@pytest.fixture(scope="session")
def ico4():
    return icosphere(4)


@pytest.fixture(scope="session")
def ico4_spectrum(ico4):
    return compute_spectrum(assemble_laplacian(ico4), 100)


@pytest.fixture(scope="session")
def bunny():
    return load_bunny()


@pytest.fixture(scope="session")
def bunny_lap(bunny):
    return assemble_laplacian(bunny)


@pytest.fixture(scope="session")
def bunny_spectrum(bunny_lap):
    return compute_spectrum(bunny_lap, 300)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            for name, value in getattr(rep, "user_properties", []):
                if name == "acceptance" and rep.when == "call":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0])):
            terminalreporter.write_line(line)
