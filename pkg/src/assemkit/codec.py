"""9D pose codec: rigid transform <-> continuous 9-vector <-> 9 discrete tokens.

The continuous form is 3 translation values (divided by a translation
scale and clamped to [-1, 1]) plus the 6D rotation representation (first
two rotation-matrix columns, column-major). Each of the nine values is
uniformly quantized into 201 bins; tokens render as ``<assemble_pose_K>``
in text and as unsigned 16-bit little-endian integers in binary.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .transforms import InvalidRotationError, RigidTransform, _check_rotation

N_BINS = 201
TOKEN_PATTERN = re.compile(r"<assemble_pose_(\d+)>")
GS_EPS = 1e-8


class DegenerateRotationError(ValueError):
    """6D values whose two vectors are (near-)parallel or (near-)zero."""


@dataclass(frozen=True)
class PoseVector9:
    """Continuous 9D pose: translation (3) + 6D rotation (first two
    rotation-matrix columns, column-major: r11,r21,r31,r12,r22,r32).

    Values are stored as given (a network emits unbounded raw values);
    clamping to [-1, 1] happens in ``pose_to_vector`` and defensively in
    ``tokenize``. ``saturation_count`` records how many translation slots
    were clamped when the vector was produced from a transform.
    """

    translation: np.ndarray
    rotation6d: np.ndarray
    saturation_count: int = field(default=0, compare=False)

    def __post_init__(self):
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64).reshape(3))
        r = np.ascontiguousarray(np.asarray(self.rotation6d, dtype=np.float64).reshape(6))
        if not (np.isfinite(t).all() and np.isfinite(r).all()):
            raise ValueError("pose vector contains non-finite values")
        t.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation6d", r)

    def values(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation6d])


@dataclass(frozen=True)
class PoseTokens:
    """Exactly nine bin indices, each in [0, n_bins - 1]."""

    bins: tuple
    n_bins: int = N_BINS

    def __post_init__(self):
        bins = tuple(int(b) for b in self.bins)
        if len(bins) != 9:
            raise ValueError(f"a pose is exactly 9 tokens, got {len(bins)}")
        if any(b < 0 or b >= self.n_bins for b in bins):
            raise ValueError(f"token bin out of range [0, {self.n_bins - 1}]: {bins}")
        object.__setattr__(self, "bins", bins)

    def text(self) -> str:
        return " ".join(f"<assemble_pose_{b}>" for b in self.bins)

    def to_bytes(self) -> bytes:
        return struct.pack("<9H", *self.bins)

    @staticmethod
    def from_text(text: str, n_bins: int = N_BINS) -> "PoseTokens":
        tokens = text.split()
        bins = []
        for tok in tokens:
            m = TOKEN_PATTERN.fullmatch(tok)
            if not m:
                raise ValueError(f"not a pose token: {tok!r}")
            bins.append(int(m.group(1)))
        return PoseTokens(tuple(bins), n_bins=n_bins)

    @staticmethod
    def from_bytes(blob: bytes, n_bins: int = N_BINS) -> "PoseTokens":
        if len(blob) != 18:
            raise ValueError(f"binary pose is 18 bytes, got {len(blob)}")
        return PoseTokens(struct.unpack("<9H", blob), n_bins=n_bins)


def rotation_to_6d(rotation: np.ndarray) -> np.ndarray:
    """First two columns of a rotation matrix, flattened column-major."""
    rotation = _check_rotation(rotation, tol=1e-4)
    return np.concatenate([rotation[:, 0], rotation[:, 1]])


def rotation_from_6d(v: np.ndarray) -> np.ndarray:
    """Gram-Schmidt decode of the 6D representation into a rotation matrix."""
    v = np.asarray(v, dtype=np.float64).reshape(6)
    a1, a2 = v[:3], v[3:]
    n1 = np.linalg.norm(a1)
    if n1 < GS_EPS:
        raise DegenerateRotationError(f"first 6D vector has near-zero norm {n1:.3e}")
    b1 = a1 / n1
    a2_perp = a2 - np.dot(b1, a2) * b1
    n2 = np.linalg.norm(a2_perp)
    if n2 < GS_EPS:
        raise DegenerateRotationError(
            f"second 6D vector is near-parallel to the first (residual norm {n2:.3e})"
        )
    b2 = a2_perp / n2
    b3 = np.cross(b1, b2)
    return np.column_stack([b1, b2, b3])


def pose_to_vector(transform: RigidTransform, translation_scale: float = 1.0) -> PoseVector9:
    """Normalize a rigid transform into the 9D codec domain.

    Translation is divided by ``translation_scale`` then clamped to
    [-1, 1]; out-of-range slots are counted, not rejected.
    """
    if translation_scale <= 0:
        raise ValueError("translation_scale must be positive")
    raw = transform.translation / translation_scale
    clamped = np.clip(raw, -1.0, 1.0)
    saturated = int(np.sum(np.abs(raw) > 1.0))
    return PoseVector9(clamped, rotation_to_6d(transform.rotation), saturation_count=saturated)


def tokenize(vector: PoseVector9, n_bins: int = N_BINS) -> PoseTokens:
    """Uniform quantization of each slot into ``n_bins`` bins.

    bin = round((x + 1)/2 * (n_bins - 1)) with half-up ties; values are
    defensively clamped to [-1, 1] first.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    x = np.clip(vector.values(), -1.0, 1.0)
    scaled = (x + 1.0) / 2.0 * (n_bins - 1)
    bins = np.floor(scaled + 0.5).astype(np.int64)
    return PoseTokens(tuple(int(b) for b in bins), n_bins=n_bins)


def bins_to_values(tokens: PoseTokens) -> np.ndarray:
    """Bin centers back in [-1, 1], one value per slot."""
    bins = np.asarray(tokens.bins, dtype=np.float64)
    return bins / (tokens.n_bins - 1) * 2.0 - 1.0


def detokenize_vector(tokens: PoseTokens) -> PoseVector9:
    values = bins_to_values(tokens)
    return PoseVector9(values[:3], values[3:])


def vector_to_pose(vector: PoseVector9, translation_scale: float = 1.0) -> RigidTransform:
    """Decode a 9D vector into a rigid transform (may raise on degenerate 6D)."""
    if translation_scale <= 0:
        raise ValueError("translation_scale must be positive")
    rotation = rotation_from_6d(vector.rotation6d)
    return RigidTransform(rotation, vector.translation * translation_scale)


def detokenize(tokens: PoseTokens, translation_scale: float = 1.0) -> RigidTransform:
    """Decode nine tokens into a rigid transform.

    The decoded rotation is orthonormal by construction; near-parallel
    quantized 6D vectors raise ``DegenerateRotationError``.
    """
    return vector_to_pose(detokenize_vector(tokens), translation_scale)


__all__ = [
    "N_BINS",
    "DegenerateRotationError",
    "InvalidRotationError",
    "PoseTokens",
    "PoseVector9",
    "bins_to_values",
    "detokenize",
    "detokenize_vector",
    "pose_to_vector",
    "rotation_from_6d",
    "rotation_to_6d",
    "tokenize",
    "vector_to_pose",
]
