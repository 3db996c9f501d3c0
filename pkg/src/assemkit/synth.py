"""Procedural multi-part assembly generators.

Four families exercise the planner, trainer, and metrics end to end:

- ``stack``: boxes stacked in z with touching faces.
- ``table``: a top slab resting on four legs (legs touch only the slab).
- ``peg_board``: a board with upright pegs (one merged part) and a plate
  with square through-holes that mates over the pegs at a configurable
  clearance.
- ``fractured_block``: a box cut by random planes into watertight convex
  pieces (each cut splits the largest current piece).

Every generated assembly is verified to be connected at the planner's
distance threshold after canonical normalization; generation retries
with a derived seed up to 10 times before erroring.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manifest import write_asset_steps, write_dataset
from .mesh import TriangleMesh, make_mesh, merge_meshes, sample_surface, save_obj
from .normalize import canonical_normalize
from .planner import (
    DEFAULT_TAU,
    DisconnectedAssemblyError,
    build_connectivity,
    build_steps,
    infer_order,
)

FAMILIES = ("stack", "table", "peg_board", "fractured_block")


class AssetGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AssetSpec:
    """One procedural assembly: family, target part count, randomization
    amount (0 = fixed nominal dimensions, 1 = full range), and seed.

    ``clearance`` is the peg-to-hole-wall gap for ``peg_board``.
    For ``fractured_block``, ``part_count`` = number of cutting planes + 1.
    """

    family: str
    part_count: int
    seed: int
    randomization: float = 1.0
    clearance: float = 0.01

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; pick from {FAMILIES}")
        lo, hi = _PART_COUNT_RANGE[self.family]
        if not lo <= self.part_count <= hi:
            raise ValueError(
                f"{self.family} supports {lo}..{hi} parts, got {self.part_count}"
            )
        if not 0.0 <= self.randomization <= 1.0:
            raise ValueError("randomization must be in [0, 1]")
        if self.clearance <= 0:
            raise ValueError("clearance must be positive")


_PART_COUNT_RANGE = {
    "stack": (2, 6),
    "table": (5, 5),
    "peg_board": (2, 2),
    "fractured_block": (2, 4),
}


def part_count_range(family: str) -> tuple[int, int]:
    """Inclusive (min, max) part count supported by a family."""
    if family not in _PART_COUNT_RANGE:
        raise ValueError(f"unknown family {family!r}; pick from {FAMILIES}")
    return _PART_COUNT_RANGE[family]


def _uniform(rng: np.random.Generator, lo: float, hi: float, amount: float) -> float:
    """Randomized draw shrunk toward the midpoint by (1 - amount)."""
    mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0
    return float(mid + (rng.uniform(-1.0, 1.0) * half * amount))


# ---------------------------------------------------------------------------
# Primitive meshes

_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # z = lo
        [4, 5, 6], [4, 6, 7],  # z = hi
        [0, 1, 5], [0, 5, 4],  # y = lo
        [3, 7, 6], [3, 6, 2],  # y = hi
        [0, 4, 7], [0, 7, 3],  # x = lo
        [1, 2, 6], [1, 6, 5],  # x = hi
    ],
    dtype=np.int64,
)


def box_mesh(lo, hi) -> TriangleMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if not (hi > lo).all():
        raise ValueError(f"box needs hi > lo, got {lo} .. {hi}")
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    verts = np.array(
        [
            [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
            [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
        ]
    )
    return make_mesh(verts, _BOX_FACES)


def cylinder_mesh(center_xy, radius: float, z0: float, z1: float, segments: int = 24) -> TriangleMesh:
    """Axis-aligned (z) cylinder. ``segments`` divisible by 4 keeps vertices
    exactly on the +-x / +-y axes, which pins the peg-to-wall clearance."""
    cx, cy = center_xy
    angles = np.arange(segments) * (2.0 * np.pi / segments)
    ring = np.stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)], axis=1)
    bottom = np.column_stack([ring, np.full(segments, z0)])
    top = np.column_stack([ring, np.full(segments, z1)])
    verts = np.vstack([bottom, top, [[cx, cy, z0]], [[cx, cy, z1]]])
    c_b, c_t = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces.append([i, j, segments + i])
        faces.append([j, segments + j, segments + i])
        faces.append([c_b, j, i])
        faces.append([c_t, segments + i, segments + j])
    return make_mesh(verts, np.array(faces, dtype=np.int64))


def plate_with_holes_mesh(size_xy, z0: float, z1: float, holes) -> TriangleMesh:
    """A slab [0,W]x[0,D]x[z0,z1] with square through-holes.

    ``holes`` is a list of (cx, cy, halfwidth); holes must lie strictly
    inside the footprint and must not overlap. The top/bottom faces are
    built by strip decomposition of the footprint minus the holes, plus
    outer and hole-wall quads.
    """
    w, d = float(size_xy[0]), float(size_xy[1])
    for cx, cy, hw in holes:
        if not (0 < cx - hw and cx + hw < w and 0 < cy - hw and cy + hw < d):
            raise ValueError("hole escapes the plate footprint")
    xs = sorted({0.0, w} | {c - h for c, _, h in holes} | {c + h for c, _, h in holes})
    verts: list[list[float]] = []
    faces: list[list[int]] = []

    def quad(p0, p1, p2, p3):
        base = len(verts)
        verts.extend([list(p0), list(p1), list(p2), list(p3)])
        faces.append([base, base + 1, base + 2])
        faces.append([base, base + 2, base + 3])

    for x0, x1 in zip(xs[:-1], xs[1:]):
        if x1 - x0 < 1e-12:
            continue
        xm = (x0 + x1) / 2.0
        blocked = sorted(
            (cy - hw, cy + hw) for cx, cy, hw in holes if cx - hw <= xm <= cx + hw
        )
        y = 0.0
        spans = []
        for b0, b1 in blocked:
            if b0 > y:
                spans.append((y, b0))
            y = max(y, b1)
        if y < d:
            spans.append((y, d))
        for y0, y1 in spans:
            quad((x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1))
            quad((x0, y0, z0), (x0, y1, z0), (x1, y1, z0), (x1, y0, z0))

    # outer walls
    quad((0, 0, z0), (w, 0, z0), (w, 0, z1), (0, 0, z1))
    quad((0, d, z0), (0, d, z1), (w, d, z1), (w, d, z0))
    quad((0, 0, z0), (0, 0, z1), (0, d, z1), (0, d, z0))
    quad((w, 0, z0), (w, d, z0), (w, d, z1), (w, 0, z1))
    # hole walls
    for cx, cy, hw in holes:
        x0, x1, y0, y1 = cx - hw, cx + hw, cy - hw, cy + hw
        quad((x0, y0, z0), (x0, y0, z1), (x1, y0, z1), (x1, y0, z0))
        quad((x0, y1, z0), (x1, y1, z0), (x1, y1, z1), (x0, y1, z1))
        quad((x0, y0, z0), (x0, y1, z0), (x0, y1, z1), (x0, y0, z1))
        quad((x1, y0, z0), (x1, y0, z1), (x1, y1, z1), (x1, y1, z0))
    return make_mesh(np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64))


# ---------------------------------------------------------------------------
# Convex polyhedron splitting (fractured_block)


def _clip_polygon(poly: np.ndarray, point: np.ndarray, normal: np.ndarray):
    """Keep the <= 0 side of the plane; returns (clipped polygon vertices,
    points lying on the plane) — Sutherland-Hodgman with crossing capture."""
    dist = (poly - point) @ normal
    kept: list[np.ndarray] = []
    on_plane: list[np.ndarray] = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        di, dj = dist[i], dist[j]
        if abs(di) <= 1e-12:
            kept.append(poly[i])
            on_plane.append(poly[i])
        elif di < 0:
            kept.append(poly[i])
        if di * dj < 0 and abs(di) > 1e-12 and abs(dj) > 1e-12:
            t = di / (di - dj)
            crossing = poly[i] + t * (poly[j] - poly[i])
            kept.append(crossing)
            on_plane.append(crossing)
    return kept, on_plane


def _dedupe(points: list[np.ndarray], tol: float = 1e-9) -> list[np.ndarray]:
    unique: list[np.ndarray] = []
    for p in points:
        if all(np.linalg.norm(p - q) > tol for q in unique):
            unique.append(p)
    return unique


def _sort_ring(points: list[np.ndarray], normal: np.ndarray) -> list[np.ndarray]:
    center = np.mean(points, axis=0)
    ref = np.array([1.0, 0.0, 0.0])
    if abs(normal @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(normal, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    angles = [np.arctan2((p - center) @ e2, (p - center) @ e1) for p in points]
    return [points[i] for i in np.argsort(angles)]


class ConvexPiece:
    """Closed convex polyhedron as a list of planar polygon faces."""

    def __init__(self, polygons: list[np.ndarray]):
        self.polygons = polygons

    @staticmethod
    def from_box(lo, hi) -> "ConvexPiece":
        x0, y0, z0 = np.asarray(lo, dtype=np.float64)
        x1, y1, z1 = np.asarray(hi, dtype=np.float64)
        v = np.array(
            [
                [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
            ]
        )
        quads = [
            v[[0, 1, 2, 3]], v[[4, 5, 6, 7]],
            v[[0, 1, 5, 4]], v[[3, 2, 6, 7]],
            v[[0, 3, 7, 4]], v[[1, 2, 6, 5]],
        ]
        return ConvexPiece(quads)

    def bbox_volume(self) -> float:
        verts = np.vstack(self.polygons)
        extent = verts.max(axis=0) - verts.min(axis=0)
        return float(np.prod(extent))

    def vertex_mean(self) -> np.ndarray:
        return np.vstack(self.polygons).mean(axis=0)

    def split(self, point: np.ndarray, normal: np.ndarray):
        """Cut by the plane through ``point`` with ``normal``; both halves
        are capped with the cut cross-section. Returns one or two pieces."""
        halves = []
        for sign in (1.0, -1.0):
            n = sign * normal
            clipped, cap_points = [], []
            for poly in self.polygons:
                kept, on_plane = _clip_polygon(poly, point, n)
                if len(kept) >= 3:
                    clipped.append(np.asarray(kept))
                cap_points.extend(on_plane)
            cap = _dedupe(cap_points)
            if len(cap) >= 3:
                clipped.append(np.asarray(_sort_ring(cap, n)))
            if len(clipped) >= 4:
                halves.append(ConvexPiece(clipped))
        return halves if len(halves) == 2 else [self]

    def to_mesh(self) -> TriangleMesh:
        verts: list[np.ndarray] = []
        faces: list[list[int]] = []
        for poly in self.polygons:
            base = len(verts)
            verts.extend(poly)
            for i in range(1, len(poly) - 1):
                faces.append([base, base + i, base + i + 1])
        return make_mesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))


# ---------------------------------------------------------------------------
# Families


def _build_stack(spec: AssetSpec, rng: np.random.Generator) -> list[TriangleMesh]:
    n, a = spec.part_count, spec.randomization
    heights = np.array([_uniform(rng, 0.18, 0.34, a) for _ in range(n)])
    total = float(heights.sum())
    parts = []
    z = 0.0
    for h in heights:
        w = _uniform(rng, 0.35, 0.75, a) * total
        d = _uniform(rng, 0.35, 0.75, a) * total
        cx = _uniform(rng, -0.05, 0.05, a) * total
        cy = _uniform(rng, -0.05, 0.05, a) * total
        parts.append(box_mesh([cx - w / 2, cy - d / 2, z], [cx + w / 2, cy + d / 2, z + h]))
        z += h
    return parts


def _build_table(spec: AssetSpec, rng: np.random.Generator) -> list[TriangleMesh]:
    a = spec.randomization
    w = _uniform(rng, 0.8, 1.2, a)
    d = _uniform(rng, 0.8, 1.2, a)
    h = _uniform(rng, 0.7, 1.0, a)
    slab_t = _uniform(rng, 0.08, 0.15, a) * h
    leg_a = _uniform(rng, 0.08, 0.14, a) * min(w, d)
    inset = _uniform(rng, 0.02, 0.08, a) * min(w, d)
    slab = box_mesh([0, 0, h - slab_t], [w, d, h])
    legs = []
    for corner_x, corner_y in ((0, 0), (1, 0), (0, 1), (1, 1)):
        x0 = inset if corner_x == 0 else w - inset - leg_a
        y0 = inset if corner_y == 0 else d - inset - leg_a
        legs.append(box_mesh([x0, y0, 0], [x0 + leg_a, y0 + leg_a, h - slab_t]))
    return [slab] + legs


def _peg_positions(
    rng: np.random.Generator, n: int, w: float, d: float, keepout: float
) -> list[tuple[float, float]]:
    margin = keepout + 0.02
    for _ in range(200):
        pts = [
            (rng.uniform(margin, w - margin), rng.uniform(margin, d - margin))
            for _ in range(n)
        ]
        ok = all(
            np.hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]) >= 2 * keepout + 0.05
            for i in range(n)
            for j in range(i + 1, n)
        )
        if ok:
            return pts
    # deterministic diagonal fallback
    return [(margin + (w - 2 * margin) * (i + 1) / (n + 1),
             margin + (d - 2 * margin) * (i + 1) / (n + 1)) for i in range(n)]


def _build_peg_board(spec: AssetSpec, rng: np.random.Generator) -> list[TriangleMesh]:
    a = spec.randomization
    w = _uniform(rng, 0.9, 1.2, a)
    d = _uniform(rng, 0.9, 1.2, a)
    board_t = _uniform(rng, 0.08, 0.12, a)
    plate_t = _uniform(rng, 0.06, 0.10, a)
    radius = _uniform(rng, 0.05, 0.08, a)
    n_pegs = int(rng.integers(1, 4))
    peg_h = plate_t + _uniform(rng, 0.12, 0.25, a)
    hole_hw = radius + spec.clearance
    centers = _peg_positions(rng, n_pegs, w, d, keepout=hole_hw + 0.03)
    board = box_mesh([0, 0, 0], [w, d, board_t])
    pegs = [
        cylinder_mesh(c, radius, board_t, board_t + peg_h, segments=24) for c in centers
    ]
    plate = plate_with_holes_mesh(
        (w, d), board_t, board_t + plate_t, [(cx, cy, hole_hw) for cx, cy in centers]
    )
    return [merge_meshes([board] + pegs), plate]


def _build_fractured(spec: AssetSpec, rng: np.random.Generator) -> list[TriangleMesh]:
    a = spec.randomization
    size = np.array(
        [_uniform(rng, 0.7, 1.2, a), _uniform(rng, 0.7, 1.2, a), _uniform(rng, 0.7, 1.2, a)]
    )
    pieces = [ConvexPiece.from_box([0.0, 0.0, 0.0], size)]
    for _ in range(spec.part_count - 1):
        target = max(range(len(pieces)), key=lambda i: pieces[i].bbox_volume())
        piece = pieces.pop(target)
        halves = [piece]
        for _attempt in range(5):
            normal = rng.normal(size=3)
            normal /= np.linalg.norm(normal)
            jitter = rng.normal(scale=0.15, size=3) * size
            point = piece.vertex_mean() + jitter * a
            halves = piece.split(point, normal)
            if len(halves) == 2:
                break
        if len(halves) != 2:
            # a plane through the vertex mean always splits a convex body
            normal = rng.normal(size=3)
            normal /= np.linalg.norm(normal)
            halves = piece.split(piece.vertex_mean(), normal)
        pieces.extend(halves)
    return [p.to_mesh() for p in pieces]


_BUILDERS = {
    "stack": _build_stack,
    "table": _build_table,
    "peg_board": _build_peg_board,
    "fractured_block": _build_fractured,
}


# ---------------------------------------------------------------------------
# Generation with connectivity verification


def _verify_connected(parts: list[TriangleMesh], tau: float, rng: np.random.Generator) -> None:
    if len(parts) < 2:
        raise AssetGenerationError("an assembly needs at least 2 parts")
    normalized, _ = canonical_normalize(parts)
    clouds = [
        sample_surface(p, 2048, seed=int(rng.integers(2**31))) for p in normalized
    ]
    m = build_connectivity(clouds, tau)
    infer_order(clouds, m)  # raises DisconnectedAssemblyError if split


def generate_asset(spec: AssetSpec, tau: float = DEFAULT_TAU) -> list[TriangleMesh]:
    """Deterministic part meshes for one assembly (raw coordinates).

    Retries with a derived seed when the built parts fail the
    connectivity check, and errors after 10 attempts.
    """
    builder = _BUILDERS[spec.family]
    last_error: Exception | None = None
    for attempt in range(10):
        rng = np.random.default_rng([spec.seed, attempt])
        try:
            parts = builder(spec, rng)
            _verify_connected(parts, tau, rng)
            return parts
        except (DisconnectedAssemblyError, ValueError) as exc:
            last_error = exc
    raise AssetGenerationError(
        f"{spec.family} seed {spec.seed}: no connected assembly in 10 attempts "
        f"(last error: {last_error})"
    )


# ---------------------------------------------------------------------------
# Dataset generation


def _split_assets(asset_ids_by_family: dict, seed: int, val_fraction: float) -> dict:
    split = {}
    for fam_index, family in enumerate(sorted(asset_ids_by_family)):
        ids = asset_ids_by_family[family]
        rng = np.random.default_rng([seed, 0xA11, fam_index])
        perm = rng.permutation(len(ids))
        if len(ids) < 2 or val_fraction <= 0.0:
            n_val = 0
        else:
            n_val = min(len(ids) - 1, max(1, int(round(val_fraction * len(ids)))))
        val = {ids[i] for i in perm[:n_val]}
        for asset_id in ids:
            split[asset_id] = "val" if asset_id in val else "train"
    return split


def worker_count() -> int:
    """Item-level parallelism cap from ``ASMK_THREADS`` (default 1)."""
    raw = os.environ.get("ASMK_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def generate_dataset(
    specs: list[AssetSpec],
    out_dir,
    seed: int = 0,
    tau: float = DEFAULT_TAU,
    points_coarse: int = 10240,
    points: int = 1024,
    rotation_limit_degrees: float | None = None,
    translation_limit: float = 1.0,
    translation_scale: float = 1.0,
    val_fraction: float = 0.1,
    randomize_fixed: bool = False,
) -> tuple[dict, list[dict]]:
    """Run generate -> normalize -> sample -> plan -> build_steps for every
    spec and write a dataset tree.

    Output layout: ``manifest.json``, ``steps.jsonl``, and per asset
    ``assets/<id>/part_XX.obj`` + ``steps/step_XX_{fixed,moving}.pc``.
    Assets are split 9:1 train/val at object level, stratified by family.
    Per-asset failures are recorded and skipped; the caller decides
    whether the failure rate is fatal. Fully deterministic per seed.
    """
    if not specs:
        raise ValueError("no asset specs given")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "assets").mkdir(exist_ok=True)

    def compute(index_spec):
        # Pure per-asset pipeline; all randomness derives from (seed, index)
        # so results are independent of worker count and completion order.
        index, spec = index_spec
        asset_id = f"{spec.family}-{index:04d}"
        try:
            raw_parts = generate_asset(spec, tau=tau)
            parts, _record = canonical_normalize(raw_parts)
            sample_rng = np.random.default_rng([seed, index, 0x5A])
            clouds = [
                sample_surface(p, points_coarse, seed=int(sample_rng.integers(2**31)))
                for p in parts
            ]
            connectivity = build_connectivity(clouds, tau)
            order = infer_order(clouds, connectivity)
            sequence = build_steps(
                clouds,
                order,
                seed=int(np.random.default_rng([seed, index, 0x57]).integers(2**31)),
                rotation_limit_degrees=rotation_limit_degrees,
                translation_limit=translation_limit,
                points=points,
                randomize_fixed=randomize_fixed,
            )
        except (AssetGenerationError, DisconnectedAssemblyError, ValueError) as exc:
            return asset_id, spec, None, {"asset_id": asset_id, "family": spec.family,
                                          "seed": spec.seed, "error": str(exc)}
        return asset_id, spec, (parts, order, sequence), None

    workers = worker_count()
    jobs = list(enumerate(specs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(compute, jobs))
    else:
        results = [compute(job) for job in jobs]

    assets, failures, all_steps = [], [], []
    ids_by_family: dict[str, list[str]] = {}
    for asset_id, spec, built, failure in results:
        if failure is not None:
            failures.append(failure)
            continue
        parts, order, sequence = built
        part_paths = []
        (out / "assets" / asset_id).mkdir(parents=True, exist_ok=True)
        for p_i, part in enumerate(parts):
            rel = f"assets/{asset_id}/part_{p_i:02d}.obj"
            save_obj(part, out / rel)
            part_paths.append(rel)
        step_entries = write_asset_steps(
            out, asset_id, spec.family, sequence.steps, translation_scale
        )
        all_steps.extend(step_entries)
        ids_by_family.setdefault(spec.family, []).append(asset_id)
        assets.append(
            {
                "id": asset_id,
                "category": spec.family,
                "order": [int(i) for i in order],
                "part_count": len(parts),
                "parts": part_paths,
                "seed": spec.seed,
            }
        )

    split = _split_assets(ids_by_family, seed, val_fraction)
    for asset in assets:
        asset["split"] = split[asset["id"]]
    for entry in all_steps:
        entry["split"] = split[entry["asset_id"]]

    params = {
        "seed": seed,
        "tau": tau,
        "points": points,
        "points_coarse": points_coarse,
        "rotation_limit_degrees": rotation_limit_degrees,
        "translation_limit": translation_limit,
        "translation_scale": translation_scale,
        "failures": failures,
    }
    manifest = write_dataset(out, params, assets, all_steps)
    return manifest, failures
