"""Command-line interface.

Subcommands wrap one library operation each and are deterministic: the
same inputs, flags, and seeds produce byte-identical outputs regardless
of ``ASMK_THREADS``. Exit codes: 0 ok, 1 internal error, 2 bad input,
3 validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_network
from .cloud import CloudFormatError, farthest_point_sample, save_cloud
from .codec import (
    N_BINS,
    PoseTokens,
    detokenize,
    pose_to_vector,
    rotation_from_6d,
    tokenize,
)
from .manifest import (
    ManifestError,
    load_manifest,
    load_predictions,
    load_step_entries,
    step_from_entry,
    validate_dataset,
    write_asset_steps,
    write_dataset,
)
from .mesh import MeshError, ObjParseError, load_obj, sample_surface, save_obj
from .metrics import SR_THRESHOLD, EvalResult, aggregate, evaluate_step
from .normalize import canonical_normalize
from .planner import (
    DEFAULT_TAU,
    DisconnectedAssemblyError,
    PlannerError,
    build_connectivity,
    build_steps,
    infer_order,
)
from .synth import FAMILIES, AssetSpec, part_count_range, generate_dataset
from .trainer import TrainDivergedError, WarmupConfig, predict, train_warmup
from .transforms import InvalidRotationError, RigidTransform

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_BAD_INPUT = 2
EXIT_VALIDATION = 3

# raised for malformed inputs -> exit 2
class CliInputError(ValueError):
    pass


# raised when inputs parse but fail a semantic check -> exit 3
class CliValidationError(ValueError):
    pass


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _floats(text: str, expect: int, what: str) -> np.ndarray:
    try:
        values = [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise CliInputError(f"{what}: {exc}") from exc
    if len(values) != expect:
        raise CliInputError(f"{what}: expected {expect} values, got {len(values)}")
    return np.asarray(values, dtype=np.float64)


def _load_parts(paths) -> list:
    if len(paths) < 2:
        raise CliInputError("need at least two part meshes")
    return [load_obj(p) for p in paths]


def _sample_parts(parts, points_coarse: int, seed: int) -> list:
    rng = np.random.default_rng([seed, 0x5A])
    return [sample_surface(p, points_coarse, seed=int(rng.integers(2**31))) for p in parts]


def _filter_entries(entries: list[dict], split: str | None) -> list[dict]:
    if split is None or split == "all":
        return entries
    kept = [e for e in entries if e.get("split") == split]
    if not kept:
        raise CliInputError(f"no steps with split={split!r} in dataset")
    return kept


# ---------------------------------------------------------------------------
# normalize


def cmd_normalize(args) -> int:
    in_dir, out_dir = Path(args.input), Path(args.output)
    if not in_dir.is_dir():
        raise CliInputError(f"input directory {in_dir} does not exist")
    top_objs = sorted(p for p in in_dir.iterdir() if p.suffix.lower() == ".obj")
    if top_objs:
        assets = [("", top_objs)]
    else:
        assets = []
        for sub in sorted(p for p in in_dir.iterdir() if p.is_dir()):
            objs = sorted(p for p in sub.iterdir() if p.suffix.lower() == ".obj")
            if objs:
                assets.append((sub.name, objs))
    if not assets:
        raise CliInputError(f"no assets found in {in_dir}")
    for name, files in assets:
        parts = [load_obj(f) for f in files]
        normalized, record = canonical_normalize(parts)
        dest = out_dir / name if name else out_dir
        dest.mkdir(parents=True, exist_ok=True)
        for f, mesh in zip(files, normalized):
            save_obj(mesh, dest / f.name)
        sidecar = dict(record.to_dict(), parts=[f.name for f in files])
        with open(dest / "normalization.json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, sort_keys=True, indent=1)
            fh.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-synth


def cmd_gen_synth(args) -> int:
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    for family in families:
        if family not in FAMILIES:
            raise CliInputError(f"unknown family {family!r} (choose from {', '.join(FAMILIES)})")
    if args.count < 1:
        raise CliInputError("--count must be >= 1")
    specs = []
    for index in range(args.count):
        family = families[index % len(families)]
        rng = np.random.default_rng([args.seed, index, 0x9C])
        lo, hi = part_count_range(family)
        specs.append(
            AssetSpec(
                family=family,
                part_count=int(rng.integers(lo, hi + 1)),
                seed=int(np.random.default_rng([args.seed, index, 0x5E]).integers(2**31)),
                randomization=args.randomization,
                clearance=args.clearance,
            )
        )
    manifest, failures = generate_dataset(
        specs,
        args.out,
        seed=args.seed,
        tau=args.tau,
        points_coarse=args.points_coarse,
        points=args.points,
        rotation_limit_degrees=args.rotation_limit_deg,
        translation_limit=args.translation_limit,
        translation_scale=args.translation_scale,
        val_fraction=args.val_fraction,
        randomize_fixed=args.randomize_fixed,
    )
    n_assets = len(manifest["assets"])
    print(f"wrote {n_assets} assets, {sum(1 for _ in open(Path(args.out) / 'steps.jsonl'))} steps "
          f"to {args.out}")
    if failures:
        for failure in failures:
            print(f"failed: {failure['asset_id']}: {failure['error']}", file=sys.stderr)
        raise CliValidationError(f"{len(failures)}/{len(specs)} assets failed to generate")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample


def cmd_sample(args) -> int:
    mesh = load_obj(args.mesh)
    coarse = sample_surface(mesh, args.points_coarse, seed=args.seed)
    cloud = farthest_point_sample(coarse, args.points) if args.points else coarse
    save_cloud(cloud, args.out)
    print(f"wrote {len(cloud)} points to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plan


def cmd_plan(args) -> int:
    parts = _load_parts(args.parts)
    if not args.no_normalize:
        parts, _ = canonical_normalize(parts)
    clouds = _sample_parts(parts, args.points_coarse, args.seed)
    connectivity = build_connectivity(clouds, args.tau)
    try:
        order = infer_order(clouds, connectivity)
    except DisconnectedAssemblyError as exc:
        raise CliValidationError(str(exc)) from exc
    _emit(
        {
            "connectivity": connectivity.entries.astype(int).tolist(),
            "order": [int(i) for i in order],
            "tau": args.tau,
        }
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# steps


def cmd_steps(args) -> int:
    parts = _load_parts(args.parts)
    if not args.no_normalize:
        parts, _ = canonical_normalize(parts)
    clouds = _sample_parts(parts, args.points_coarse, args.seed)
    connectivity = build_connectivity(clouds, args.tau)
    try:
        order = infer_order(clouds, connectivity)
    except DisconnectedAssemblyError as exc:
        raise CliValidationError(str(exc)) from exc
    sequence = build_steps(
        clouds,
        order,
        seed=args.seed,
        rotation_limit_degrees=args.rotation_limit_deg,
        translation_limit=args.translation_limit,
        points=args.points,
        randomize_fixed=args.randomize_fixed,
    )
    out = Path(args.out)
    asset_id = args.asset_id
    part_paths = []
    (out / "assets" / asset_id).mkdir(parents=True, exist_ok=True)
    for p_i, part in enumerate(parts):
        rel = f"assets/{asset_id}/part_{p_i:02d}.obj"
        save_obj(part, out / rel)
        part_paths.append(rel)
    entries = write_asset_steps(out, asset_id, args.category, sequence.steps,
                                args.translation_scale)
    for entry in entries:
        entry["split"] = args.split
    asset = {
        "id": asset_id,
        "category": args.category,
        "order": [int(i) for i in order],
        "part_count": len(parts),
        "parts": part_paths,
        "seed": args.seed,
        "split": args.split,
    }
    params = {
        "seed": args.seed,
        "tau": args.tau,
        "points": args.points,
        "points_coarse": args.points_coarse,
        "rotation_limit_degrees": args.rotation_limit_deg,
        "translation_limit": args.translation_limit,
        "translation_scale": args.translation_scale,
        "failures": [],
    }
    write_dataset(out, params, [asset], entries)
    print(f"wrote {len(entries)} steps to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# tokenize


def cmd_tokenize(args) -> int:
    if args.translation is not None:
        if args.rotation is None and args.rotation_6d is None:
            raise CliInputError("--translation requires --rotation or --rotation-6d")
        translation = _floats(args.translation, 3, "--translation")
        if args.rotation is not None:
            rotation = _floats(args.rotation, 9, "--rotation").reshape(3, 3)
            six = None
        else:
            six = _floats(args.rotation_6d, 6, "--rotation-6d")
            rotation = rotation_from_6d(six)
        pose = RigidTransform(rotation, translation)
        vector = pose_to_vector(pose, args.translation_scale)
        tokens = tokenize(vector, n_bins=args.bins)
        _emit(
            {
                "saturated_slots": vector.saturation_count,
                "text": tokens.text(),
                "tokens": list(tokens.bins),
                "vector": [float(v) for v in vector.values()],
            }
        )
        return EXIT_OK
    if args.text is not None or args.tokens is not None:
        if args.tokens is not None:
            bins = tuple(int(b) for b in args.tokens.replace(",", " ").split())
            tokens = PoseTokens(bins, n_bins=args.bins)
        else:
            tokens = PoseTokens.from_text(args.text, n_bins=args.bins)
        pose = detokenize(tokens, args.translation_scale)
        _emit(
            {
                "rotation": pose.rotation.tolist(),
                "translation": pose.translation.tolist(),
            }
        )
        return EXIT_OK
    raise CliInputError(
        "nothing to do: give --translation with --rotation/--rotation-6d, or --text/--tokens"
    )


# ---------------------------------------------------------------------------
# train-warmup


def _load_split_steps(dataset_dir, split):
    manifest = load_manifest(dataset_dir)
    entries = _filter_entries(load_step_entries(dataset_dir, manifest), split)
    steps = [step_from_entry(dataset_dir, e) for e in entries]
    return manifest, entries, steps


def cmd_train_warmup(args) -> int:
    manifest, entries, steps = _load_split_steps(args.dataset, args.split)
    rotation_limit = args.rotation_limit_deg
    if rotation_limit is None:
        rotation_limit = manifest.get("rotation_limit_degrees")
    translation_limit = args.translation_limit
    if translation_limit is None:
        translation_limit = float(manifest.get("translation_limit", 1.0))
    config = WarmupConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        rotation_limit_degrees=rotation_limit,
        translation_limit=translation_limit,
        w_trans=args.w_trans,
        w_rot=args.w_rot,
        momentum=args.momentum,
        channels=args.channels,
        k=args.k,
        gate_hidden=args.gate_hidden,
        train_points=args.train_points,
        augment=args.augment,
        lr_patience=args.lr_patience,
        lr_factor=args.lr_factor,
        min_lr=args.min_lr,
        lr_threshold=args.lr_threshold,
        val_fraction=args.val_fraction,
        grad_clip=args.grad_clip,
    )
    groups = [e["asset_id"] for e in entries]
    try:
        _net, records = train_warmup(steps, config, groups=groups, checkpoint_path=args.out)
    except TrainDivergedError as exc:
        raise CliValidationError(str(exc)) from exc
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record.to_dict(), sort_keys=True,
                                    separators=(",", ":")) + "\n")
    final = records[-1]
    print(f"trained {config.epochs} epochs on {len(steps)} steps; "
          f"final loss {final.loss_total:.6f}; checkpoint {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict


def cmd_predict(args) -> int:
    net, extra = load_network(args.checkpoint)
    points = args.points
    if points is None:
        points = int(extra.get("warmup", {}).get("train_points", 256))
    _manifest, entries, steps = _load_split_steps(args.dataset, args.split)
    with open(args.out, "w", encoding="utf-8") as fh:
        for entry, step in zip(entries, steps):
            pose, vector = predict(net, step, points=points)
            row = {
                "pose": {
                    "rotation": pose.rotation.tolist(),
                    "translation": pose.translation.tolist(),
                },
                "step_id": entry["step_id"],
                "tokens": list(tokenize(vector).bins),
            }
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    print(f"wrote {len(steps)} predictions to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    manifest, entries, steps = _load_split_steps(args.dataset, args.split)
    scale = float(manifest.get("translation_scale", 1.0))
    predictions = load_predictions(args.predictions, scale)
    missing = [e["step_id"] for e in entries if e["step_id"] not in predictions]
    if missing:
        shown = ", ".join(missing[:5]) + ("..." if len(missing) > 5 else "")
        raise CliInputError(f"{len(missing)} steps lack predictions: {shown}")
    results = []
    for entry, step in zip(entries, steps):
        results.append(
            evaluate_step(
                entry["step_id"],
                entry["category"],
                predictions[entry["step_id"]],
                step,
                sr_threshold=args.sr_threshold,
            )
        )
    with open(args.out, "w", encoding="utf-8") as fh:
        for result in results:
            fh.write(json.dumps(result.to_dict(), sort_keys=True,
                                separators=(",", ":")) + "\n")
    n_success = sum(r.success for r in results)
    print(f"evaluated {len(results)} steps; {n_success} successes; results in {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    results = []
    with open(args.results, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                results.append(EvalResult.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise CliInputError(f"{args.results}:{line_no}: {exc}") from exc
    if not results:
        raise CliInputError(f"no results in {args.results}")
    report = aggregate(results)
    table = report.to_table()
    sys.stdout.write(table + "\n")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate / export


def cmd_validate(args) -> int:
    problems = validate_dataset(args.dataset)
    for problem in problems:
        print(problem, file=sys.stderr)
    if problems:
        raise CliValidationError(f"{len(problems)} problems found")
    print("ok")
    return EXIT_OK


def cmd_export(args) -> int:
    """Write predicted placements as point-only OBJ files for viewers."""
    manifest, entries, steps = _load_split_steps(args.dataset, args.split)
    scale = float(manifest.get("translation_scale", 1.0))
    predictions = load_predictions(args.predictions, scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for entry, step in zip(entries, steps):
        pose = predictions.get(entry["step_id"])
        if pose is None:
            continue
        placed = pose.apply(step.moving_cloud)
        name = entry["step_id"].replace(":", "_") + "_pred.obj"
        with open(out / name, "w", encoding="utf-8") as fh:
            for p in placed.points:
                fh.write(f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        written += 1
    print(f"wrote {written} predicted placements to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="assemkit",
        description="Assembly-pose toolkit: normalization, planning, pose "
        "tokenization, equivariant warm-up training, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *names):
        if "seed" in names:
            p.add_argument("--seed", type=int, default=0)
        if "tau" in names:
            p.add_argument("--tau", type=float, default=DEFAULT_TAU)
        if "points_coarse" in names:
            p.add_argument("--points-coarse", type=int, default=10240)
        if "points" in names:
            p.add_argument("--points", type=int, default=1024)
        if "limits" in names:
            p.add_argument("--rotation-limit-deg", type=float, default=None)
            p.add_argument("--translation-limit", type=float, default=1.0)
        if "scale" in names:
            p.add_argument("--translation-scale", type=float, default=1.0)

    p = sub.add_parser("normalize", help="joint-normalize OBJ parts per asset")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("gen-synth", help="generate a synthetic assembly dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--families", default=",".join(FAMILIES))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--randomization", type=float, default=1.0)
    p.add_argument("--clearance", type=float, default=0.01)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--randomize-fixed", action="store_true")
    add_common(p, "seed", "tau", "points_coarse", "points", "limits", "scale")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("sample", help="sample a point cloud from a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    add_common(p, "seed", "points_coarse", "points")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("plan", help="infer the assembly order of OBJ parts")
    p.add_argument("--parts", nargs="+", required=True)
    p.add_argument("--no-normalize", action="store_true")
    add_common(p, "seed", "tau", "points_coarse")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("steps", help="build supervised assembly steps from OBJ parts")
    p.add_argument("--parts", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--asset-id", default="asset-0000")
    p.add_argument("--category", default="custom")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--randomize-fixed", action="store_true")
    add_common(p, "seed", "tau", "points_coarse", "points", "limits", "scale")
    p.set_defaults(func=cmd_steps)

    p = sub.add_parser("tokenize", help="convert a pose to tokens, or tokens to a pose")
    p.add_argument("--translation", help="3 comma-separated values")
    p.add_argument("--rotation", help="9 comma-separated values, row-major")
    p.add_argument("--rotation-6d", help="6 comma-separated values")
    p.add_argument("--text", help="token text to decode")
    p.add_argument("--tokens", help="9 comma-separated bin ids to decode")
    p.add_argument("--bins", type=int, default=N_BINS)
    add_common(p, "scale")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("train-warmup", help="train the pose regressor on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="write per-epoch records to this JSONL file")
    p.add_argument("--split", choices=("train", "val", "all"), default="train")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--gate-hidden", type=int, default=16)
    p.add_argument("--train-points", type=int, default=256)
    p.add_argument("--w-trans", type=float, default=1.0)
    p.add_argument("--w-rot", type=float, default=1.0)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--lr-patience", type=int, default=50)
    p.add_argument("--lr-factor", type=float, default=0.5)
    p.add_argument("--min-lr", type=float, default=1e-5)
    p.add_argument("--lr-threshold", type=float, default=1e-4,
                   help="relative improvement below which an epoch counts toward the plateau")
    p.add_argument("--grad-clip", type=float, default=1.0,
                   help="global gradient-norm clip; 0 disables")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--rotation-limit-deg", type=float, default=None,
                   help="augmentation rotation limit; defaults to the dataset's")
    p.add_argument("--translation-limit", type=float, default=None,
                   help="augmentation translation limit; defaults to the dataset's")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_warmup)

    p = sub.add_parser("predict", help="run a trained network over dataset steps")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--points", type=int, default=None,
                   help="inference subsample size; defaults to the checkpoint's")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a predictions file against ground truth")
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--sr-threshold", type=float, default=SR_THRESHOLD)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate eval results into a category table")
    p.add_argument("--results", required=True)
    p.add_argument("--out", help="also write the report as JSON")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="check a dataset's files and token consistency")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("export", help="write predicted placements as OBJ point sets")
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.set_defaults(func=cmd_export)

    return parser


_BAD_INPUT_ERRORS = (
    CliInputError,
    ObjParseError,
    MeshError,
    CloudFormatError,
    CheckpointError,
    ManifestError,
    InvalidRotationError,
    PlannerError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    PermissionError,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except _BAD_INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except Exception:  # pragma: no cover - defensive
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
