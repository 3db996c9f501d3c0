"""Shared fixtures and independent oracle helpers.

Oracles here are deliberately written with naive loops and textbook
formulas, independent of the library's vectorized implementations, so a
bug in the package cannot hide in its own test harness.
"""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from assemkit.cloud import PointCloud
from assemkit.mesh import TriangleMesh

settings.register_profile(
    "assemkit",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("assemkit")


# ---------------------------------------------------------------------------
# Independent rotation construction (QR-based, unlike the library's
# quaternion sampling) so transform tests do not reuse the code under test.


def qr_rotation(rng: np.random.Generator) -> np.ndarray:
    m = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(m)
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0.0:
        q[:, 0] = -q[:, 0]
    return q


def assert_rotation(r: np.ndarray, tol: float = 1e-9) -> None:
    assert np.allclose(r @ r.T, np.eye(3), atol=tol)
    assert abs(np.linalg.det(r) - 1.0) < tol


# ---------------------------------------------------------------------------
# Brute-force metric references


def chamfer_reference(a: np.ndarray, b: np.ndarray) -> float:
    """O(N*M) double-loop chamfer: 0.5 * (mean min d^2 both ways)."""
    ab = []
    for p in a:
        ab.append(min(float(np.dot(p - q, p - q)) for q in b))
    ba = []
    for q in b:
        ba.append(min(float(np.dot(p - q, p - q)) for p in a))
    return 0.5 * (sum(ab) / len(ab) + sum(ba) / len(ba))


def fps_reference(points: np.ndarray, count: int) -> np.ndarray:
    """Naive greedy farthest-point sampling with the same start rule
    (farthest from the centroid, ties broken by lowest index)."""
    centroid = points.mean(axis=0)
    dist_c = [float(np.linalg.norm(p - centroid)) for p in points]
    selected = [int(np.argmax(dist_c))]
    while len(selected) < count:
        best_i, best_d = -1, -1.0
        for i in range(len(points)):
            if i in selected:
                continue
            d = min(float(np.linalg.norm(points[i] - points[j])) for j in selected)
            if d > best_d:
                best_i, best_d = i, d
        selected.append(best_i)
    return points[selected]


# ---------------------------------------------------------------------------
# Hand-built meshes/clouds (independent of assemkit.synth)


CUBE_FACES = np.array(
    [
        [0, 1, 2], [0, 2, 3],  # bottom
        [4, 6, 5], [4, 7, 6],  # top
        [0, 5, 1], [0, 4, 5],
        [1, 6, 2], [1, 5, 6],
        [2, 7, 3], [2, 6, 7],
        [3, 4, 0], [3, 7, 4],
    ],
    dtype=np.int64,
)


def cuboid_mesh(lo, hi) -> TriangleMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    vertices = np.array(
        [
            [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
            [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
        ],
        dtype=np.float64,
    )
    return TriangleMesh(vertices, CUBE_FACES.copy())


def grid_cloud(lo, hi, n: int = 4) -> PointCloud:
    """Deterministic lattice filling a box; handy for planner fixtures."""
    axes = [np.linspace(lo[i], hi[i], n) for i in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return PointCloud(pts)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
