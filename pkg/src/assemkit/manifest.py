"""Dataset manifest schema: writing, loading, validation, predictions.

A dataset directory holds ``manifest.json`` (version, asset entries with
split tags, generation parameters), ``steps.jsonl`` (one step record per
line with cloud paths, pose tokens, and the continuous 9D pose vector),
and the referenced OBJ / point-cloud files. Predictions files are JSONL
mapping a step id to either nine tokens, token text, or a raw pose.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .cloud import load_cloud, save_cloud
from .mesh import load_obj
from .codec import (
    PoseTokens,
    PoseVector9,
    bins_to_values,
    detokenize,
    pose_to_vector,
    tokenize,
    vector_to_pose,
)
from .planner import AssemblyStep
from .transforms import RigidTransform

MANIFEST_VERSION = "assemkit/1"


class ManifestError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Schema builders and writing


def make_step_entry(
    asset_id: str,
    category: str,
    step: AssemblyStep,
    fixed_rel: str,
    moving_rel: str,
    translation_scale: float,
) -> dict:
    vector = pose_to_vector(step.target_pose, translation_scale)
    tokens = tokenize(vector)
    return {
        "asset_id": asset_id,
        "category": category,
        "fixed_cloud": fixed_rel,
        "moving_cloud": moving_rel,
        "part_id": step.part_id,
        "pose_vector": [float(v) for v in vector.values()],
        "saturated_slots": vector.saturation_count,
        "step_id": f"{asset_id}:{step.index}",
        "step_index": step.index,
        "tokens": list(tokens.bins),
        "translation_scale": translation_scale,
    }


def write_asset_steps(
    out_dir, asset_id: str, category: str, steps: list[AssemblyStep], translation_scale: float
) -> list[dict]:
    """Write the per-step cloud files and return the step entries."""
    root = Path(out_dir)
    (root / "assets" / asset_id / "steps").mkdir(parents=True, exist_ok=True)
    entries = []
    for step in steps:
        fixed_rel = f"assets/{asset_id}/steps/step_{step.index:02d}_fixed.pc"
        moving_rel = f"assets/{asset_id}/steps/step_{step.index:02d}_moving.pc"
        save_cloud(step.fixed_cloud, root / fixed_rel)
        save_cloud(step.moving_cloud, root / moving_rel)
        entries.append(
            make_step_entry(asset_id, category, step, fixed_rel, moving_rel, translation_scale)
        )
    return entries


def write_dataset(out_dir, params: dict, assets: list[dict], step_entries: list[dict]) -> dict:
    """Write manifest.json + steps.jsonl; returns the manifest dict.

    Output bytes depend only on the arguments (sorted keys, no
    timestamps), so identical inputs rewrite identical files.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "steps.jsonl", "w", encoding="utf-8") as fh:
        for entry in step_entries:
            fh.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")
    manifest = {
        "version": MANIFEST_VERSION,
        "assets": assets,
        "steps_file": "steps.jsonl",
        **params,
    }
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# Loading


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    if not path.is_file():
        raise ManifestError(f"no manifest.json in {dataset_dir}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    version = manifest.get("version")
    if version != MANIFEST_VERSION:
        raise ManifestError(
            f"{path}: schema version {version!r} unsupported (expected {MANIFEST_VERSION!r})"
        )
    return manifest


def load_step_entries(dataset_dir, manifest: dict | None = None) -> list[dict]:
    root = Path(dataset_dir)
    manifest = manifest or load_manifest(root)
    steps_path = root / manifest["steps_file"]
    if not steps_path.is_file():
        raise ManifestError(f"missing steps file {steps_path}")
    entries = []
    with open(steps_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{steps_path}:{line_no}: invalid JSON ({exc})") from exc
    return entries


def step_from_entry(dataset_dir, entry: dict) -> AssemblyStep:
    """Materialize one step: clouds from disk, exact pose from the stored
    continuous vector."""
    root = Path(dataset_dir)
    vector = PoseVector9(entry["pose_vector"][:3], entry["pose_vector"][3:])
    target = vector_to_pose(vector, float(entry["translation_scale"]))
    return AssemblyStep(
        index=int(entry["step_index"]),
        fixed_cloud=load_cloud(root / entry["fixed_cloud"]),
        moving_cloud=load_cloud(root / entry["moving_cloud"]),
        target_pose=target,
        part_id=int(entry["part_id"]),
    )


def validate_dataset(dataset_dir, quantization_tol: float = 0.005 + 1e-9) -> list[str]:
    """Structural validation; returns human-readable problems (empty = ok).

    Checks: referenced files exist and parse, step ids are unique, and
    each step's tokens agree with its continuous pose vector within the
    quantization bound.
    """
    problems = []
    root = Path(dataset_dir)
    try:
        manifest = load_manifest(root)
    except ManifestError as exc:
        return [str(exc)]
    for asset in manifest.get("assets", []):
        for rel in asset.get("parts", []):
            if not (root / rel).is_file():
                problems.append(f"asset {asset['id']}: missing part file {rel}")
                continue
            try:
                load_obj(root / rel)
            except ValueError as exc:
                problems.append(f"asset {asset['id']}: unreadable part {rel} ({exc})")
    try:
        entries = load_step_entries(root, manifest)
    except ManifestError as exc:
        return problems + [str(exc)]
    asset_ids = {a["id"] for a in manifest.get("assets", [])}
    seen_ids = set()
    for entry in entries:
        sid = entry.get("step_id", "<missing step_id>")
        if sid in seen_ids:
            problems.append(f"duplicate step_id {sid}")
        seen_ids.add(sid)
        if entry.get("asset_id") not in asset_ids:
            problems.append(f"step {sid}: dangling asset_id {entry.get('asset_id')}")
        for key in ("fixed_cloud", "moving_cloud"):
            rel = entry.get(key)
            path = root / rel
            if not path.is_file():
                problems.append(f"step {sid}: missing {key} file {rel}")
                continue
            try:
                cloud = load_cloud(path)
            except ValueError as exc:
                problems.append(f"step {sid}: unreadable {key} ({exc})")
                continue
            if len(cloud) != int(manifest.get("points", len(cloud))):
                problems.append(
                    f"step {sid}: {key} has {len(cloud)} points, manifest says "
                    f"{manifest.get('points')}"
                )
        vector = np.asarray(entry["pose_vector"], dtype=np.float64)
        tokens = PoseTokens(tuple(entry["tokens"]))
        recoded = tokenize(PoseVector9(vector[:3], vector[3:]))
        if recoded.bins != tokens.bins:
            problems.append(f"step {sid}: tokens do not re-derive from pose_vector")
        gap = np.abs(bins_to_values(tokens) - np.clip(vector, -1.0, 1.0)).max()
        if gap > quantization_tol:
            problems.append(
                f"step {sid}: token/vector disagreement {gap:.4g} exceeds quantization bound"
            )
    return problems


# ---------------------------------------------------------------------------
# Predictions


def parse_prediction_row(row: dict, translation_scale: float) -> tuple[str, RigidTransform]:
    """One predictions-JSONL row -> (step_id, pose).

    Accepts, in priority order: a raw pose {rotation, translation}, nine
    integer ``tokens``, or whitespace ``token_text`` of
    ``<assemble_pose_K>`` symbols.
    """
    if "step_id" not in row:
        raise ManifestError("prediction row lacks step_id")
    sid = str(row["step_id"])
    if "pose" in row:
        pose = row["pose"]
        return sid, RigidTransform(
            np.asarray(pose["rotation"], dtype=np.float64),
            np.asarray(pose["translation"], dtype=np.float64),
        )
    if "tokens" in row:
        tokens = PoseTokens(tuple(int(b) for b in row["tokens"]))
        return sid, detokenize(tokens, translation_scale)
    if "token_text" in row:
        tokens = PoseTokens.from_text(str(row["token_text"]))
        return sid, detokenize(tokens, translation_scale)
    raise ManifestError(f"prediction for {sid} has none of pose/tokens/token_text")


def load_predictions(path, translation_scale: float) -> dict:
    """Predictions JSONL -> {step_id: RigidTransform}."""
    out: dict[str, RigidTransform] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{line_no}: invalid JSON ({exc})") from exc
            try:
                sid, pose = parse_prediction_row(row, translation_scale)
            except (ValueError, KeyError) as exc:
                raise ManifestError(f"{path}:{line_no}: {exc}") from exc
            if sid in out:
                raise ManifestError(f"{path}:{line_no}: duplicate prediction for {sid}")
            out[sid] = pose
    return out
