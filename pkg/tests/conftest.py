from __future__ import annotations

import numpy as np
import pytest

from utils.mesh import build_mesh
from utils.operators import geometry_cache
from utils.primitives import icosphere, torus

TETRA_VERTICES = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
TETRA_FACES = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]

# vertex index = x + 2 y + 4 z
CUBE_VERTICES = [[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)]
CUBE_FACES = [[0, 2, 3], [0, 3, 1], [4, 5, 7], [4, 7, 6], [0, 1, 5], [0, 5, 4],
              [2, 6, 7], [2, 7, 3], [0, 4, 6], [0, 6, 2], [1, 3, 7], [1, 7, 5]]

# (origin, U, V) with U x V the outward normal
_BOX_SIDES = [
    ((0, 0, 0), (0, 1, 0), (1, 0, 0)),
    ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
    ((0, 0, 0), (1, 0, 0), (0, 0, 1)),
    ((0, 1, 0), (0, 0, 1), (1, 0, 0)),
    ((0, 0, 0), (0, 0, 1), (0, 1, 0)),
    ((1, 0, 0), (0, 1, 0), (0, 0, 1)),
]


def gridded_box(n: int):
    """Unit cube with every side split into an n x n grid of triangle pairs."""
    index = {}
    vertices, faces = [], []

    def vid(p):
        key = tuple(int(round(c * n)) for c in p)
        if key not in index:
            index[key] = len(vertices)
            vertices.append(p)
        return index[key]

    for origin, U, V in _BOX_SIDES:
        o, u, v = (np.array(x, dtype=float) for x in (origin, U, V))
        ids = [[vid(o + (i / n) * u + (j / n) * v) for j in range(n + 1)] for i in range(n + 1)]
        for i in range(n):
            for j in range(n):
                faces.append([ids[i][j], ids[i + 1][j], ids[i + 1][j + 1]])
                faces.append([ids[i][j], ids[i + 1][j + 1], ids[i][j + 1]])
    return build_mesh(np.array(vertices), np.array(faces))


@pytest.fixture
def tetrahedron():
    return build_mesh(TETRA_VERTICES, TETRA_FACES)


@pytest.fixture
def cube():
    return build_mesh(CUBE_VERTICES, CUBE_FACES)


@pytest.fixture(scope="session")
def sphere4():
    return icosphere(4, 1.0)


@pytest.fixture(scope="session")
def sphere4_cache(sphere4):
    return geometry_cache(sphere4)


@pytest.fixture(scope="session")
def torus64():
    return torus(2.0, 1.0, 64)


@pytest.fixture(scope="session")
def torus64_cache(torus64):
    return geometry_cache(torus64)
