import numpy as np
import pytest

from mtf_osm.fem import CoefficientField
from mtf_osm.mesh import extract_skeleton, generate_partitioned_disk, generate_partitioned_square
from mtf_osm.skeleton_solver import SkeletonSystem

KAPPA0 = 3.0


def gaussian(center=(0.3, 0.2), width=0.2):
    c = np.asarray(center)

    def f(xy):
        return np.exp(-np.sum((np.asarray(xy) - c) ** 2, axis=1) / width**2)

    return f


def disk_coefficients(source=True):
    # mu in {1, 2}, kappa jumps across every interface; annulus carries kappa0.
    return CoefficientField.piecewise_constant(
        mu=[1.0, 2.0, 1.0, 2.0],
        kappa=[KAPPA0, 4.0, 5.0, 2.5],
        kappa0=KAPPA0,
        source=gaussian() if source else None,
    )


@pytest.fixture(scope="session")
def disk_mesh():
    return generate_partitioned_disk(3, 1.0, 2.0, 0.1)


@pytest.fixture(scope="session")
def disk_skeleton(disk_mesh):
    return extract_skeleton(disk_mesh)


@pytest.fixture(scope="session")
def disk_system(disk_mesh):
    return SkeletonSystem(disk_mesh, disk_coefficients())


@pytest.fixture(scope="session")
def square_mesh():
    return generate_partitioned_square(16)


@pytest.fixture(scope="session")
def square_system(square_mesh):
    coeffs = CoefficientField.piecewise_constant(
        mu=[1.0, 2.0], kappa=[KAPPA0, 4.5], kappa0=KAPPA0, source=gaussian((0.3, 0.6), 0.15)
    )
    return SkeletonSystem(square_mesh, coeffs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_complex(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


# One PASS/FAIL line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
