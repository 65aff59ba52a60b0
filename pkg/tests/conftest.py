import numpy as np
import pytest

from asmfield.affinity import build_affinity_grid, default_params, spacing_for_dims
from asmfield.geometry import TriMesh
from asmfield.scenes import PegHoleSpec, generate_pair


def make_cube(center=(0.0, 0.0, 0.0), half: float = 0.5) -> TriMesh:
    """Axis-aligned cube as 12 consistently oriented triangles."""
    c = np.asarray(center, dtype=float)
    signs = [(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
             (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)]
    verts = np.array([c + half * np.array(s) for s in signs])
    quads = [(0, 3, 2, 1),   # bottom  (-z)
             (4, 5, 6, 7),   # top     (+z)
             (0, 1, 5, 4),   # front   (-y)
             (2, 3, 7, 6),   # back    (+y)
             (1, 2, 6, 5),   # right   (+x)
             (3, 0, 4, 7)]   # left    (-x)
    faces = []
    for a, b, cc, d in quads:
        faces.append((a, b, cc))
        faces.append((a, cc, d))
    return TriMesh(verts, np.array(faces, dtype=np.int64))


@pytest.fixture(scope="session")
def unit_cube():
    return make_cube()


@pytest.fixture(scope="session")
def example1_pair():
    spec = PegHoleSpec()
    return generate_pair(spec)


@pytest.fixture(scope="session")
def example1_small_grids(example1_pair):
    """Coarse 20-node fields for fast unit tests (not the acceptance grids)."""
    peg, block = example1_pair
    grid_a = build_affinity_grid(block, default_params(block),
                                 spacing_for_dims(block, 20))
    grid_b = build_affinity_grid(peg, default_params(peg),
                                 spacing_for_dims(peg, 20))
    return grid_a, grid_b


ACCEPT_MARGIN = 0.5  # wide margin keeps rotating-box truncation residue small


@pytest.fixture(scope="session")
def example1_grids32(example1_pair):
    """The 32-node acceptance fields (built once per test session)."""
    peg, block = example1_pair
    grid_a = build_affinity_grid(block, default_params(block),
                                 spacing_for_dims(block, 32))
    grid_b = build_affinity_grid(peg, default_params(peg),
                                 spacing_for_dims(peg, 32, ACCEPT_MARGIN),
                                 margin_factor=ACCEPT_MARGIN)
    return grid_a, grid_b


@pytest.fixture(scope="session")
def example1_grids64(example1_pair):
    """Finer fields for the rotational-flatness gate."""
    peg, block = example1_pair
    grid_a = build_affinity_grid(block, default_params(block),
                                 spacing_for_dims(block, 64), threads=4)
    grid_b = build_affinity_grid(peg, default_params(peg),
                                 spacing_for_dims(peg, 64, ACCEPT_MARGIN),
                                 margin_factor=ACCEPT_MARGIN, threads=4)
    return grid_a, grid_b


@pytest.fixture(scope="session")
def example2_grids32():
    peg, block = generate_pair(PegHoleSpec(cross_section="rectangular"))
    grid_a = build_affinity_grid(block, default_params(block),
                                 spacing_for_dims(block, 32))
    grid_b = build_affinity_grid(peg, default_params(peg),
                                 spacing_for_dims(peg, 32, ACCEPT_MARGIN),
                                 margin_factor=ACCEPT_MARGIN)
    return grid_a, grid_b
