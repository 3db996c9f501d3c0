import filecmp
import os
from pathlib import Path

import numpy as np
import pytest

from assemkit.cloud import load_cloud
from assemkit.manifest import load_manifest, load_step_entries, validate_dataset
from assemkit.normalize import canonical_normalize
from assemkit.mesh import sample_surface
from assemkit.planner import DEFAULT_TAU, build_connectivity, infer_order
from assemkit.synth import (
    FAMILIES,
    AssetSpec,
    box_mesh,
    cylinder_mesh,
    generate_asset,
    generate_dataset,
    part_count_range,
    plate_with_holes_mesh,
    worker_count,
)


# ---------------------------------------------------------------------------
# specs


def test_part_count_ranges():
    assert part_count_range("stack") == (2, 6)
    assert part_count_range("table") == (5, 5)
    assert part_count_range("peg_board") == (2, 2)
    assert part_count_range("fractured_block") == (2, 4)
    with pytest.raises(ValueError):
        part_count_range("gearbox")


def test_spec_validation():
    AssetSpec("stack", 4, seed=0)  # ok
    with pytest.raises(ValueError):
        AssetSpec("gearbox", 2, seed=0)
    with pytest.raises(ValueError):
        AssetSpec("stack", 7, seed=0)
    with pytest.raises(ValueError):
        AssetSpec("table", 4, seed=0)
    with pytest.raises(ValueError):
        AssetSpec("stack", 3, seed=0, randomization=1.5)
    with pytest.raises(ValueError):
        AssetSpec("peg_board", 2, seed=0, clearance=0.0)


# ---------------------------------------------------------------------------
# primitive meshes


def test_box_mesh_geometry():
    box = box_mesh([0, 0, 0], [2.0, 3.0, 5.0])
    lo, hi = box.bounds()
    assert np.array_equal(lo, [0, 0, 0]) and np.array_equal(hi, [2, 3, 5])
    assert len(box.faces) == 12
    expected = 2 * (2 * 3 + 3 * 5 + 5 * 2)
    assert abs(box.area() - expected) < 1e-12
    with pytest.raises(ValueError):
        box_mesh([0, 0, 0], [1.0, -1.0, 1.0])


def test_cylinder_mesh_geometry():
    n, r, h = 24, 0.5, 2.0
    cyl = cylinder_mesh((1.0, -1.0), r, 0.0, h, segments=n)
    lo, hi = cyl.bounds()
    # segments divisible by 4 puts vertices exactly on the axis circles
    assert np.allclose(lo, [1 - r, -1 - r, 0.0], atol=1e-15)
    assert np.allclose(hi, [1 + r, -1 + r, h], atol=1e-15)
    cap = n * 0.5 * r * r * np.sin(2 * np.pi / n)
    side = n * (2 * r * np.sin(np.pi / n)) * h
    assert abs(cyl.area() - (2 * cap + side)) < 1e-12


def test_plate_with_holes_geometry():
    w, d, t, hw = 2.0, 1.5, 0.2, 0.25
    plate = plate_with_holes_mesh((w, d), 0.0, t, [(0.7, 0.6, hw)])
    lo, hi = plate.bounds()
    assert np.allclose(lo, [0, 0, 0]) and np.allclose(hi, [w, d, t])
    # rectilinear, so the area decomposes exactly
    top_bottom = 2 * (w * d - (2 * hw) ** 2)
    outer = 2 * (w + d) * t
    hole_walls = 4 * (2 * hw) * t
    assert abs(plate.area() - (top_bottom + outer + hole_walls)) < 1e-12


def test_plate_hole_must_stay_inside():
    with pytest.raises(ValueError):
        plate_with_holes_mesh((1.0, 1.0), 0.0, 0.1, [(0.1, 0.5, 0.2)])


def test_plate_multiple_holes_area():
    holes = [(0.5, 0.5, 0.1), (1.4, 0.9, 0.15)]
    plate = plate_with_holes_mesh((2.0, 1.5), 0.0, 0.3, holes)
    top_bottom = 2 * (2.0 * 1.5 - sum((2 * h) ** 2 for _, _, h in holes))
    outer = 2 * (2.0 + 1.5) * 0.3
    walls = sum(4 * (2 * h) * 0.3 for _, _, h in holes)
    assert abs(plate.area() - (top_bottom + outer + walls)) < 1e-12


# ---------------------------------------------------------------------------
# families


FAMILY_SPECS = [
    AssetSpec("stack", 4, seed=11),
    AssetSpec("table", 5, seed=12),
    AssetSpec("peg_board", 2, seed=13),
    AssetSpec("fractured_block", 3, seed=14),
]


@pytest.mark.parametrize("spec", FAMILY_SPECS, ids=lambda s: s.family)
def test_family_builds_requested_parts(spec):
    parts = generate_asset(spec)
    assert len(parts) == spec.part_count
    for part in parts:
        assert len(part.faces) >= 4
        assert part.area() > 0


@pytest.mark.parametrize("spec", FAMILY_SPECS, ids=lambda s: s.family)
def test_family_is_plannable(spec):
    parts, _ = canonical_normalize(generate_asset(spec))
    clouds = [sample_surface(p, 2048, seed=100 + i) for i, p in enumerate(parts)]
    m = build_connectivity(clouds, DEFAULT_TAU)
    order = infer_order(clouds, m)
    assert sorted(order) == list(range(len(parts)))


def test_generation_is_deterministic():
    spec = AssetSpec("stack", 3, seed=77)
    a = generate_asset(spec)
    b = generate_asset(spec)
    for ma, mb in zip(a, b):
        assert np.array_equal(ma.vertices, mb.vertices)
        assert np.array_equal(ma.faces, mb.faces)


def test_generation_varies_with_seed():
    a = generate_asset(AssetSpec("stack", 3, seed=1))
    b = generate_asset(AssetSpec("stack", 3, seed=2))
    assert not np.array_equal(a[0].vertices, b[0].vertices)


def test_stack_parts_rest_on_each_other():
    parts = generate_asset(AssetSpec("stack", 5, seed=3))
    for below, above in zip(parts[:-1], parts[1:]):
        top_z = below.bounds()[1][2]
        bottom_z = above.bounds()[0][2]
        assert abs(top_z - bottom_z) < 1e-12


def test_stack_order_is_bottom_up():
    parts, _ = canonical_normalize(generate_asset(AssetSpec("stack", 5, seed=4)))
    clouds = [sample_surface(p, 1024, seed=i) for i, p in enumerate(parts)]
    order = infer_order(clouds, build_connectivity(clouds, DEFAULT_TAU))
    assert order == list(range(5))


def test_fractured_pieces_fill_the_block():
    spec = AssetSpec("fractured_block", 4, seed=9)
    parts = generate_asset(spec)
    merged_lo = np.min([p.bounds()[0] for p in parts], axis=0)
    merged_hi = np.max([p.bounds()[1] for p in parts], axis=0)
    # cutting never creates material outside the source block, and the
    # pieces jointly span it
    assert (merged_hi - merged_lo > 0.5).all()
    total = sum(p.area() for p in parts)
    block = 2 * (
        (merged_hi - merged_lo)[[0, 1, 2]] * (merged_hi - merged_lo)[[1, 2, 0]]
    ).sum()
    assert total > block - 1e-9  # cuts only add surface


def test_zero_randomization_pins_dimensions():
    a = generate_asset(AssetSpec("table", 5, seed=5, randomization=0.0))
    b = generate_asset(AssetSpec("table", 5, seed=99, randomization=0.0))
    for ma, mb in zip(a, b):
        assert np.allclose(ma.vertices, mb.vertices, atol=1e-12)


# ---------------------------------------------------------------------------
# dataset generation


DATASET_SPECS = [
    AssetSpec("stack", 3, seed=21),
    AssetSpec("stack", 2, seed=22),
    AssetSpec("peg_board", 2, seed=23),
    AssetSpec("peg_board", 2, seed=24),
    AssetSpec("fractured_block", 2, seed=25),
    AssetSpec("fractured_block", 3, seed=26),
]

GEN_KW = dict(
    seed=5,
    points_coarse=768,
    points=64,
    rotation_limit_degrees=30.0,
    translation_limit=1.0,
    translation_scale=1.0,
    val_fraction=0.5,
)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    manifest, failures = generate_dataset(DATASET_SPECS, out, **GEN_KW)
    assert failures == []
    return out


def tree_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_manifest_structure(dataset_dir):
    manifest = load_manifest(dataset_dir)
    assert manifest["version"] == "assemkit/1"
    assert manifest["seed"] == 5
    assert manifest["points"] == 64
    assert manifest["points_coarse"] == 768
    assert manifest["tau"] == DEFAULT_TAU
    assert manifest["rotation_limit_degrees"] == 30.0
    assert manifest["failures"] == []
    ids = [a["id"] for a in manifest["assets"]]
    assert ids == sorted(ids) or len(ids) == len(set(ids))
    assert {a["category"] for a in manifest["assets"]} == {
        "stack", "peg_board", "fractured_block",
    }
    for asset in manifest["assets"]:
        assert len(asset["parts"]) == asset["part_count"]
        assert sorted(asset["order"]) == list(range(asset["part_count"]))


def test_split_is_stratified_by_family(dataset_dir):
    manifest = load_manifest(dataset_dir)
    by_family = {}
    for a in manifest["assets"]:
        by_family.setdefault(a["category"], []).append(a["split"])
    # two assets per family at 50% -> exactly one val each
    for family, splits in by_family.items():
        assert sorted(splits) == ["train", "val"], family


def test_step_entries_reference_real_clouds(dataset_dir):
    manifest = load_manifest(dataset_dir)
    entries = load_step_entries(dataset_dir, manifest)
    # every non-base part contributes one step
    expected = sum(a["part_count"] - 1 for a in manifest["assets"])
    assert len(entries) == expected
    for entry in entries:
        fixed = load_cloud(dataset_dir / entry["fixed_cloud"])
        moving = load_cloud(dataset_dir / entry["moving_cloud"])
        assert len(fixed) == 64 and len(moving) == 64
        assert len(entry["tokens"]) == 9
        assert len(entry["pose_vector"]) == 9


def test_dataset_validates_clean(dataset_dir):
    assert validate_dataset(dataset_dir) == []


def test_regeneration_is_byte_identical(dataset_dir, tmp_path):
    out = tmp_path / "again"
    generate_dataset(DATASET_SPECS, out, **GEN_KW)
    a, b = tree_bytes(Path(dataset_dir)), tree_bytes(out)
    assert a.keys() == b.keys()
    for rel in a:
        assert a[rel] == b[rel], f"{rel} differs between identical runs"


def test_worker_count_parsing(monkeypatch):
    monkeypatch.delenv("ASMK_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("ASMK_THREADS", "4")
    assert worker_count() == 4
    monkeypatch.setenv("ASMK_THREADS", "0")
    assert worker_count() == 1
    monkeypatch.setenv("ASMK_THREADS", "broken")
    assert worker_count() == 1


def test_parallel_generation_matches_serial(dataset_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("ASMK_THREADS", "2")
    out = tmp_path / "parallel"
    generate_dataset(DATASET_SPECS, out, **GEN_KW)
    a, b = tree_bytes(Path(dataset_dir)), tree_bytes(out)
    assert a.keys() == b.keys()
    for rel in a:
        assert a[rel] == b[rel], f"{rel} differs between serial and parallel runs"


def test_families_constant_is_complete():
    assert set(FAMILIES) == {"stack", "table", "peg_board", "fractured_block"}
