"""Triangle meshes: loading, validation, and area-weighted surface sampling.

Meshes are indexed triangle surfaces. Faces with (near-)zero area are
dropped at construction time because area-weighted sampling is undefined
on them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud

logger = logging.getLogger(__name__)

# Faces whose area is below this fraction of (longest extent)^2 are
# considered degenerate and removed.
DEGENERATE_AREA_EPS = 1e-12


class MeshError(ValueError):
    """Invalid mesh data or an operation on an unusable mesh."""


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle surface. Vertices are float64, faces are int vertex triples."""

    vertices: np.ndarray
    faces: np.ndarray
    dropped_degenerate: int = field(default=0, compare=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        faces = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if verts.ndim != 2 or verts.shape[1] != 3 or verts.shape[0] == 0:
            raise MeshError(f"vertices must be a non-empty (V, 3) array, got {verts.shape}")
        if not np.isfinite(verts).all():
            raise MeshError("vertices contain non-finite values")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshError(f"faces must be an (F, 3) array, got {faces.shape}")
        if faces.size and (faces.min() < 0 or faces.max() >= len(verts)):
            raise MeshError("face index out of range")
        verts.flags.writeable = False
        faces.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    def __len__(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def extents(self) -> np.ndarray:
        lo, hi = self.bounds()
        return hi - lo

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        """Same topology over new vertex positions."""
        return TriangleMesh(vertices, self.faces, dropped_degenerate=self.dropped_degenerate)


def remove_degenerate_faces(
    vertices: np.ndarray, faces: np.ndarray, area_eps: float = DEGENERATE_AREA_EPS
) -> tuple[np.ndarray, int]:
    """Drop faces whose area falls below ``area_eps`` relative to the mesh scale.

    The threshold is ``area_eps * max(extent)**2`` so the rule is invariant to
    uniform rescaling. Returns the kept faces and the number dropped.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return faces, 0
    extent = float((vertices.max(axis=0) - vertices.min(axis=0)).max())
    scale = extent * extent if extent > 0 else 1.0
    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    keep = areas >= area_eps * scale
    dropped = int((~keep).sum())
    return faces[keep], dropped


def make_mesh(vertices, faces) -> TriangleMesh:
    """Build a mesh, silently removing degenerate faces (count kept on the mesh)."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    faces, dropped = remove_degenerate_faces(vertices, faces)
    if dropped:
        logger.warning("dropped %d degenerate face(s)", dropped)
    if len(faces) == 0:
        raise MeshError("mesh has no non-degenerate faces")
    return TriangleMesh(vertices, faces, dropped_degenerate=dropped)


def merge_meshes(meshes: list[TriangleMesh]) -> TriangleMesh:
    """Concatenate meshes into one (vertex indices re-offset)."""
    if not meshes:
        raise MeshError("cannot merge an empty mesh list")
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    return TriangleMesh(np.vstack(verts), np.vstack(faces))


# ---------------------------------------------------------------------------
# Wavefront OBJ subset (v / f records; polygons fan-split on load)


class ObjParseError(MeshError):
    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


def _parse_face_ref(token: str, n_vertices: int, path, line_no: int) -> int:
    # "3", "3/1", "3/1/2", "3//2"; negative indices are relative to the end
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ObjParseError(path, line_no, f"bad face vertex reference {token!r}") from None
    if idx < 0:
        idx = n_vertices + idx
    else:
        idx -= 1
    if idx < 0 or idx >= n_vertices:
        raise ObjParseError(path, line_no, f"face vertex index {token!r} out of range")
    return idx


def load_obj(path) -> TriangleMesh:
    """Read a triangulated mesh from an OBJ file (v/f records only).

    Polygonal faces are fan-split into triangles; degenerate faces are
    dropped with a logged count.
    """
    verts: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ObjParseError(path, line_no, "vertex record needs 3 coordinates")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise ObjParseError(path, line_no, "bad vertex coordinate") from None
            elif tag == "f":
                refs = [_parse_face_ref(t, len(verts), path, line_no) for t in parts[1:]]
                if len(refs) < 3:
                    raise ObjParseError(path, line_no, "face needs at least 3 vertices")
                for i in range(1, len(refs) - 1):
                    tris.append((refs[0], refs[i], refs[i + 1]))
            # vt / vn / o / g / s / usemtl / mtllib are ignored
    if not verts:
        raise ObjParseError(path, 0, "no vertices found")
    if not tris:
        raise ObjParseError(path, 0, "no faces found")
    return make_mesh(np.array(verts, dtype=np.float64), np.array(tris, dtype=np.int64))


def save_obj(mesh: TriangleMesh, path) -> None:
    # repr(float) is the shortest exact decimal, so save -> load round-trips
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {int(f[0]) + 1} {int(f[1]) + 1} {int(f[2]) + 1}\n")


# ---------------------------------------------------------------------------
# Surface sampling


def sample_surface_with_faces(
    mesh: TriangleMesh, count: int, seed: int
) -> tuple[PointCloud, np.ndarray]:
    """Area-weighted surface sampling, also returning each point's source face.

    Faces are selected with probability proportional to area, then a point
    is placed uniformly inside each selected triangle (square-root
    barycentric warp). Deterministic for a fixed seed.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise MeshError("all faces degenerate; cannot sample surface")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(areas)
    face_idx = np.searchsorted(cum, rng.random(count) * total)
    face_idx = np.minimum(face_idx, len(areas) - 1)
    tri = mesh.vertices[mesh.faces[face_idx]]
    # sqrt warp gives the uniform distribution on each triangle
    r1 = np.sqrt(rng.random((count, 1)))
    r2 = rng.random((count, 1))
    points = (1.0 - r1) * tri[:, 0] + r1 * (1.0 - r2) * tri[:, 1] + r1 * r2 * tri[:, 2]
    return PointCloud(points), face_idx


def sample_surface(mesh: TriangleMesh, count: int, seed: int) -> PointCloud:
    """Draw ``count`` area-weighted points on the mesh surface (seeded)."""
    cloud, _ = sample_surface_with_faces(mesh, count, seed)
    return cloud
