import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from xnocs import shapes  # noqa: E402
from xnocs.core import Mesh  # noqa: E402
from xnocs.normalize import normalize_mesh  # noqa: E402

_ACCEPTANCE_LINES = []


def random_soup(rng, max_triangles=50, colors=False):
    """Random triangle soup, normalized into the unit cube.

    Half the triangles are small (clustered around random centers) and half
    span the whole volume, so pixels see anywhere from zero to many hits.
    """
    n = int(rng.integers(1, max_triangles + 1))
    centers = rng.random((n, 1, 3))
    scale = np.where(rng.random((n, 1, 1)) < 0.5, 0.3, 1.0)
    verts = (centers + scale * (rng.random((n, 3, 3)) - 0.5)).reshape(-1, 3)
    tris = np.arange(3 * n).reshape(n, 3)
    vc = rng.random((3 * n, 3)) if colors else None
    mesh = Mesh(verts, tris, vc).cleaned()
    if len(mesh) == 0:
        return random_soup(rng, max_triangles, colors)
    return normalize_mesh(mesh)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sphere():
    return normalize_mesh(shapes.icosphere(subdivisions=3, color="position"))[0]


@pytest.fixture(scope="session")
def test_meshes():
    """Three fixed normalized meshes: convex, genus-1, thin-part chair."""
    return {
        "sphere": normalize_mesh(shapes.icosphere(subdivisions=3))[0],
        "torus": normalize_mesh(shapes.torus(n_major=32, n_minor=16))[0],
        "chair": normalize_mesh(shapes.chair())[0],
    }


@pytest.fixture
def acceptance_report():
    def record(criterion: str, ok: bool, detail: str):
        _ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
