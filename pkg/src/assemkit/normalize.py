"""Canonical frame normalization for multi-part assemblies.

The canonical frame is z-up with the assembly's longest axis-aligned
extent scaled to 1, the horizontal bounding-box center at the origin, and
the lowest point at z = 0. All parts are normalized jointly so their
relative layout is preserved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh


@dataclass(frozen=True)
class NormalizationRecord:
    """Affine map into the canonical frame: p' = scale * p + offset."""

    scale: float
    offset: np.ndarray

    def __post_init__(self):
        off = np.ascontiguousarray(np.asarray(self.offset, dtype=np.float64).reshape(3))
        off.flags.writeable = False
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "offset", off)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + self.offset

    def invert(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.offset) / self.scale

    def to_dict(self) -> dict:
        return {"scale": self.scale, "offset": self.offset.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "NormalizationRecord":
        return NormalizationRecord(float(d["scale"]), np.asarray(d["offset"], dtype=np.float64))


def normalization_for_bounds(lo: np.ndarray, hi: np.ndarray) -> NormalizationRecord:
    extent = hi - lo
    longest = float(extent.max())
    if longest <= 0:
        raise ValueError("degenerate assembly: zero extent along every axis")
    scale = 1.0 / longest
    center_xy = (lo[:2] + hi[:2]) / 2.0
    offset = np.array([-scale * center_xy[0], -scale * center_xy[1], -scale * lo[2]])
    return NormalizationRecord(scale, offset)


def canonical_normalize(
    parts: list[TriangleMesh],
) -> tuple[list[TriangleMesh], NormalizationRecord]:
    """Jointly normalize all parts into the canonical frame.

    Returns the normalized parts and the record needed to map further
    geometry into (or out of) the same frame.
    """
    if not parts:
        raise ValueError("no parts to normalize")
    all_v = np.vstack([p.vertices for p in parts])
    record = normalization_for_bounds(all_v.min(axis=0), all_v.max(axis=0))
    normalized = [p.with_vertices(record.apply(p.vertices)) for p in parts]
    return normalized, record
