"""assemkit: geometric core of a multimodal assembly-pose pipeline.

Canonical mesh normalization and sampling, assembly-sequence planning,
an SE(3)-equivariant point-cloud pose regressor with a warm-up trainer,
a discrete 9D pose codec, evaluation metrics, and procedural synthetic
assemblies — all deterministic per seed and tied together by a CLI.
"""

from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_network,
    save_checkpoint,
    save_network,
)
from .cloud import (
    CloudFormatError,
    PointCloud,
    concat_clouds,
    farthest_point_sample,
    load_cloud,
    min_pairwise_distance,
    pairwise_sq_distances,
    save_cloud,
)
from .codec import (
    N_BINS,
    DegenerateRotationError,
    PoseTokens,
    PoseVector9,
    detokenize,
    detokenize_vector,
    pose_to_vector,
    rotation_from_6d,
    rotation_to_6d,
    tokenize,
    vector_to_pose,
)
from .encoder import (
    AssemblyPoseNet,
    CorrelationFeature,
    EncoderConfig,
    VNFeature,
    build_network,
    correlate,
    encode,
    knn_indices,
    project_pose,
    vn_linear,
    vn_nonlinear,
)
from .manifest import (
    ManifestError,
    load_manifest,
    load_predictions,
    load_step_entries,
    step_from_entry,
    validate_dataset,
)
from .mesh import (
    MeshError,
    ObjParseError,
    TriangleMesh,
    load_obj,
    make_mesh,
    merge_meshes,
    sample_surface,
    save_obj,
)
from .metrics import (
    SR_THRESHOLD,
    CategoryReport,
    CategoryRow,
    EvalResult,
    aggregate,
    chamfer,
    evaluate_step,
    is_success,
    rmse_translation,
    scd,
    scd_clouds,
)
from .normalize import NormalizationRecord, canonical_normalize, normalization_for_bounds
from .planner import (
    DEFAULT_TAU,
    AssemblySequence,
    AssemblyStep,
    ConnectivityMatrix,
    DisconnectedAssemblyError,
    PlannerError,
    build_connectivity,
    build_steps,
    connected_components,
    infer_order,
)
from .synth import (
    FAMILIES,
    AssetGenerationError,
    AssetSpec,
    generate_asset,
    generate_dataset,
    part_count_range,
)
from .trainer import (
    TrainDivergedError,
    TrainRecord,
    WarmupConfig,
    grad_check,
    loss_geodesic,
    loss_translation,
    predict,
    train_warmup,
)
from .transforms import (
    InvalidRotationError,
    RigidTransform,
    geodesic_angle,
    random_rotation,
    random_se3,
    rotation_about_axis,
)

__version__ = "0.1.0"

__all__ = [
    "AssemblyPoseNet",
    "AssemblySequence",
    "AssemblyStep",
    "AssetGenerationError",
    "AssetSpec",
    "CategoryReport",
    "CategoryRow",
    "CheckpointError",
    "CloudFormatError",
    "ConnectivityMatrix",
    "CorrelationFeature",
    "DEFAULT_TAU",
    "DegenerateRotationError",
    "DisconnectedAssemblyError",
    "EncoderConfig",
    "EvalResult",
    "FAMILIES",
    "InvalidRotationError",
    "ManifestError",
    "MeshError",
    "N_BINS",
    "NormalizationRecord",
    "ObjParseError",
    "PlannerError",
    "PointCloud",
    "PoseTokens",
    "PoseVector9",
    "RigidTransform",
    "SR_THRESHOLD",
    "TrainDivergedError",
    "TrainRecord",
    "TriangleMesh",
    "VNFeature",
    "WarmupConfig",
    "aggregate",
    "build_connectivity",
    "build_network",
    "build_steps",
    "canonical_normalize",
    "chamfer",
    "concat_clouds",
    "connected_components",
    "correlate",
    "detokenize",
    "detokenize_vector",
    "encode",
    "evaluate_step",
    "farthest_point_sample",
    "generate_asset",
    "generate_dataset",
    "geodesic_angle",
    "grad_check",
    "infer_order",
    "is_success",
    "knn_indices",
    "load_checkpoint",
    "load_cloud",
    "load_manifest",
    "load_network",
    "load_obj",
    "load_predictions",
    "load_step_entries",
    "loss_geodesic",
    "loss_translation",
    "make_mesh",
    "merge_meshes",
    "min_pairwise_distance",
    "normalization_for_bounds",
    "pairwise_sq_distances",
    "part_count_range",
    "pose_to_vector",
    "predict",
    "project_pose",
    "random_rotation",
    "random_se3",
    "rmse_translation",
    "rotation_about_axis",
    "rotation_from_6d",
    "rotation_to_6d",
    "sample_surface",
    "save_checkpoint",
    "save_cloud",
    "save_network",
    "save_obj",
    "scd",
    "scd_clouds",
    "step_from_entry",
    "tokenize",
    "train_warmup",
    "validate_dataset",
    "vector_to_pose",
    "vn_linear",
    "vn_nonlinear",
]
