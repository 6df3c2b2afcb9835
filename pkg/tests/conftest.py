import numpy as np
import pytest

from hvbem.assembly import assemble
from hvbem.fixtures import concentric_mesh, sphere_mesh
from hvbem.mesh import EPS0
from hvbem.solver import solve


@pytest.fixture(scope="session")
def sphere2():
    """Charged unit sphere, icosphere level 2 (162 collocation points)."""
    return sphere_mesh(2, radius=1.0, v0=1.0)


@pytest.fixture(scope="session")
def sphere3():
    """Charged unit sphere, icosphere level 3 (642 collocation points)."""
    return sphere_mesh(3, radius=1.0, v0=1.0)


@pytest.fixture(scope="session")
def sphere2_solved(sphere2):
    matrix, rhs = assemble(sphere2)
    solution = solve(matrix, rhs)
    return sphere2, matrix, rhs, solution


@pytest.fixture(scope="session")
def capacitor2():
    """Concentric electrode spheres a=0.5 (1 V) and c=1.0 (0 V), level 2."""
    mesh = concentric_mesh(2, [(0.5, "electrode 1.0"), (1.0, "electrode 0.0")])
    matrix, rhs = assemble(mesh)
    solution = solve(matrix, rhs)
    return mesh, solution


@pytest.fixture(scope="session")
def floating_shell1():
    """Electrodes at 0.5 / 1.0 with a floating sheet shell at 0.75, level 1."""
    mesh = concentric_mesh(
        1,
        [
            (0.5, "electrode 1.0"),
            (0.75, f"sheet 0 {EPS0!r} {EPS0!r}"),
            (1.0, "electrode 0.0"),
        ],
    )
    matrix, rhs = assemble(mesh)
    solution = solve(matrix, rhs)
    return mesh, matrix, rhs, solution


@pytest.fixture(scope="session")
def flat_triangle_mesh_text():
    """Smallest valid mesh: one flat unit right triangle."""
    return (
        "bemesh 1\n"
        "vertex 0 0 0 0\n"
        "vertex 1 1 0 0\n"
        "vertex 2 0 1 0\n"
        "vertex 3 0.5 0 0\n"
        "vertex 4 0.5 0.5 0\n"
        "vertex 5 0 0.5 0\n"
        "triangle 0 1 2 3 4 5 0\n"
        "patch 0 electrode 1.0\n"
    )


def make_flat_tri(corners):
    """Duck-typed flat curved-triangle stand-in for quadrature tests."""
    from hvbem.mesh import CurvedTriangle, _flat_circumcircle

    corners = np.asarray(corners, dtype=float)
    nodes = np.vstack(
        [
            corners,
            0.5 * (corners[0] + corners[1]),
            0.5 * (corners[1] + corners[2]),
            0.5 * (corners[2] + corners[0]),
        ]
    )
    center, radius = _flat_circumcircle(corners)
    return CurvedTriangle(
        index=0,
        corner_ids=(0, 1, 2),
        midside_ids=(3, 4, 5),
        patch_tag=0,
        nodes=nodes,
        circumcenter=center,
        circumradius=radius,
    )
