"""Point clouds: container, binary file format, farthest point sampling.

The binary format is magic ``ASMKPC1`` + little-endian uint32 point count
+ N*3 float32 coordinates. Clouds are float64 in memory; the file format
narrows to float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PC_MAGIC = b"ASMKPC1"


class CloudFormatError(ValueError):
    """Malformed point-cloud file."""


@dataclass(frozen=True)
class PointCloud:
    """Immutable (N, 3) float64 point set."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be an (N, 3) array, got {pts.shape}")
        if pts.shape[0] == 0:
            raise ValueError("point cloud may not be empty")
        if not np.isfinite(pts).all():
            raise ValueError("points contain non-finite values")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)

    def translate(self, offset) -> "PointCloud":
        return PointCloud(self.points + np.asarray(offset, dtype=np.float64))


def concat_clouds(clouds: list[PointCloud]) -> PointCloud:
    if not clouds:
        raise ValueError("cannot concatenate an empty cloud list")
    return PointCloud(np.vstack([c.points for c in clouds]))


def save_cloud(cloud: PointCloud, path) -> None:
    data = cloud.points.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(PC_MAGIC)
        fh.write(np.uint32(len(cloud)).astype("<u4").tobytes())
        fh.write(data.tobytes(order="C"))


def load_cloud(path) -> PointCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(PC_MAGIC) + 4:
        raise CloudFormatError(f"{path}: truncated point-cloud file")
    if blob[: len(PC_MAGIC)] != PC_MAGIC:
        raise CloudFormatError(f"{path}: bad magic {blob[:7]!r}")
    count = int(np.frombuffer(blob, dtype="<u4", count=1, offset=len(PC_MAGIC))[0])
    payload = blob[len(PC_MAGIC) + 4 :]
    expected = count * 3 * 4
    if len(payload) != expected:
        raise CloudFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} for {count} points"
        )
    pts = np.frombuffer(payload, dtype="<f4").reshape(count, 3).astype(np.float64)
    return PointCloud(pts)


def farthest_point_sample(cloud: PointCloud, count: int, seed: int = 0) -> PointCloud:
    """Greedy farthest point subsampling, in selection order.

    The first point is the one farthest from the centroid (ties broken by
    lowest index); each next point maximizes the minimum distance to the
    points already chosen. Fully deterministic; ``seed`` is accepted for
    interface symmetry with the stochastic samplers but never consulted.
    """
    pts = cloud.points
    n = len(pts)
    if count <= 0:
        raise ValueError("count must be positive")
    if count > n:
        raise ValueError(f"cannot sample {count} points from a cloud of {n}")
    centroid = pts.mean(axis=0)
    d_centroid = np.linalg.norm(pts - centroid, axis=1)
    # argmax returns the lowest index among ties
    first = int(np.argmax(d_centroid))
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = first
    min_d2 = np.sum((pts - pts[first]) ** 2, axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(min_d2))
        chosen[i] = nxt
        d2 = np.sum((pts - pts[nxt]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
    return PointCloud(pts[chosen])


def pairwise_sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs squared Euclidean distances, (len(a), len(b)).

    Uses the |a|^2 + |b|^2 - 2ab expansion; tiny negative round-off is
    clipped to zero.
    """
    a_sq = np.sum(a * a, axis=1)[:, None]
    b_sq = np.sum(b * b, axis=1)[None, :]
    d2 = a_sq + b_sq - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def min_pairwise_distance(a: PointCloud, b: PointCloud) -> float:
    """Exact minimum Euclidean distance between two clouds (all pairs).

    Chunked over the first cloud to bound memory at large sizes.
    """
    pa, pb = a.points, b.points
    best = np.inf
    chunk = max(1, int(4_000_000 // max(len(pb), 1)))
    for start in range(0, len(pa), chunk):
        d2 = pairwise_sq_distances(pa[start : start + chunk], pb)
        best = min(best, float(d2.min()))
    return float(np.sqrt(best))
