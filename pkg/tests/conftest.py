import numpy as np
import pytest

from citypano.mesh import CityMesh, SemanticTag


def make_unit_cube(tag=SemanticTag.BUILDING) -> CityMesh:
    """Axis-aligned unit cube, faces wound outward."""
    v = np.array(
        [
            [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
            [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
        ],
        dtype=float,
    )
    faces = [
        [0, 3, 2, 1],  # bottom (-z)
        [4, 5, 6, 7],  # top (+z)
        [0, 1, 5, 4],  # -y
        [2, 3, 7, 6],  # +y
        [1, 2, 6, 5],  # +x
        [3, 0, 4, 7],  # -x
    ]
    return CityMesh(vertices=v, polygons=faces, tags=[int(tag)] * 6)


def make_cylinder(n_facets=32, radius=1.0, height=2.0) -> CityMesh:
    """Closed prism approximating a cylinder: n side quads plus 2 n-gon caps."""
    ang = 2 * np.pi * np.arange(n_facets) / n_facets
    bottom = np.stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(n_facets)], axis=1)
    top = bottom + [0, 0, height]
    verts = np.vstack([bottom, top])
    polys = []
    for i in range(n_facets):
        j = (i + 1) % n_facets
        polys.append([i, j, n_facets + j, n_facets + i])
    polys.append(list(range(n_facets)))  # bottom cap
    polys.append(list(range(2 * n_facets - 1, n_facets - 1, -1)))  # top cap
    return CityMesh(vertices=verts, polygons=polys, tags=[int(SemanticTag.BUILDING)] * len(polys))


def random_triangle_mesh(rng, n_polygons, extent=10.0, cluster=True) -> CityMesh:
    """Random triangle soup; clustered placement makes adjacency non-trivial."""
    verts = []
    polys = []
    n_clusters = max(1, n_polygons // 8) if cluster else n_polygons
    centers = rng.uniform(-extent, extent, size=(n_clusters, 3))
    for i in range(n_polygons):
        c = centers[rng.integers(0, n_clusters)]
        base = c + rng.uniform(-0.5, 0.5, size=3)
        a = base
        b = base + rng.uniform(-0.6, 0.6, size=3)
        d = base + rng.uniform(-0.6, 0.6, size=3)
        if np.linalg.norm(np.cross(b - a, d - a)) < 1e-6:
            d = d + [0.3, 0.2, 0.1]
        k = len(verts)
        verts.extend([a, b, d])
        polys.append([k, k + 1, k + 2])
    return CityMesh(
        vertices=np.asarray(verts), polygons=polys, tags=[int(SemanticTag.OTHER)] * n_polygons
    )


@pytest.fixture
def unit_cube():
    return make_unit_cube()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
