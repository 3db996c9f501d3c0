"""Evaluation metrics: translation RMSE, Chamfer distances, success rate,
and per-category report aggregation.

Chamfer Distance here is the half-sum of the two directional mean
squared nearest-neighbor distances; the Symmetric Chamfer Distance (SCD)
is twice that, i.e. the plain sum of both directions. A step is
successful iff SCD < 0.02 (strict).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, pairwise_sq_distances
from .planner import AssemblyStep
from .transforms import RigidTransform

SR_THRESHOLD = 0.02


def rmse_translation(preds, targets) -> float:
    """sqrt(mean over samples of squared translation-error norm)."""
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, 3)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(preds) == 0:
        raise ValueError("rmse over an empty sample list is undefined")
    if preds.shape != targets.shape:
        raise ValueError(f"shape mismatch {preds.shape} vs {targets.shape}")
    return float(np.sqrt(np.mean(np.sum((preds - targets) ** 2, axis=1))))


def chamfer(a: PointCloud, b: PointCloud) -> float:
    """0.5 * (mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2), exact."""
    d2 = pairwise_sq_distances(a.points, b.points)
    return 0.5 * (float(d2.min(axis=1).mean()) + float(d2.min(axis=0).mean()))


def scd_clouds(a: PointCloud, b: PointCloud) -> float:
    return 2.0 * chamfer(a, b)


def scd(pred_pose: RigidTransform, step: AssemblyStep) -> float:
    """Symmetric Chamfer Distance of the moving cloud at the predicted vs
    ground-truth placement."""
    return scd_clouds(pred_pose.apply(step.moving_cloud), step.target_pose.apply(step.moving_cloud))


def scd_rotation_only(pred_pose: RigidTransform, step: AssemblyStep) -> float:
    """SCD with the predicted translation replaced by the ground truth,
    isolating rotation-induced error (robust to shape symmetry, unlike a
    geodesic-angle metric)."""
    substituted = RigidTransform(pred_pose.rotation, step.target_pose.translation)
    return scd(substituted, step)


def is_success(scd_value: float, threshold: float = SR_THRESHOLD) -> bool:
    return scd_value < threshold


@dataclass(frozen=True)
class EvalResult:
    """Per-step outcome. ``rmse_t`` is this step's translation error norm."""

    step_id: str
    category: str
    rmse_t: float
    scd: float
    success: bool

    def __post_init__(self):
        if self.rmse_t < 0 or self.scd < 0:
            raise ValueError("metric values must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "rmse_t": self.rmse_t,
            "scd": self.scd,
            "step_id": self.step_id,
            "success": self.success,
        }

    @staticmethod
    def from_dict(d: dict) -> "EvalResult":
        return EvalResult(
            step_id=str(d["step_id"]),
            category=str(d["category"]),
            rmse_t=float(d["rmse_t"]),
            scd=float(d["scd"]),
            success=bool(d["success"]),
        )


def evaluate_step(
    step_id: str,
    category: str,
    pred_pose: RigidTransform,
    step: AssemblyStep,
    sr_threshold: float = SR_THRESHOLD,
) -> EvalResult:
    scd_value = scd(pred_pose, step)
    return EvalResult(
        step_id=step_id,
        category=category,
        rmse_t=float(np.linalg.norm(pred_pose.translation - step.target_pose.translation)),
        scd=scd_value,
        success=is_success(scd_value, sr_threshold),
    )


@dataclass(frozen=True)
class CategoryRow:
    category: str
    count: int
    rmse_t: float
    scd: float
    success_rate: float

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "count": self.count,
            "rmse_t": self.rmse_t,
            "scd": self.scd,
            "success_rate": self.success_rate,
        }


@dataclass(frozen=True)
class CategoryReport:
    """Per-category means plus an 'All' row weighted by sample counts."""

    rows: tuple
    all_row: CategoryRow

    def to_dict(self) -> dict:
        return {
            "all": self.all_row.to_dict(),
            "categories": [r.to_dict() for r in self.rows],
        }

    def to_table(self) -> str:
        headers = ("Category", "Count", "RMSE(T)", "SCD", "SR")
        lines = []
        for row in list(self.rows) + [self.all_row]:
            lines.append(
                (
                    row.category,
                    str(row.count),
                    f"{row.rmse_t:.6f}",
                    f"{row.scd:.6f}",
                    f"{row.success_rate * 100.0:.1f}%",
                )
            )
        widths = [max(len(h), *(len(line[i]) for line in lines)) for i, h in enumerate(headers)]
        out = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
        out.append("  ".join("-" * w for w in widths))
        for line in lines:
            out.append("  ".join(line[i].ljust(widths[i]) for i in range(len(headers))))
        return "\n".join(out)


def aggregate(results: list[EvalResult]) -> CategoryReport:
    """Arithmetic means per category; the All row is the sample-count-
    weighted average of the category rows."""
    if not results:
        raise ValueError("cannot aggregate an empty result list")
    by_cat: dict[str, list[EvalResult]] = {}
    for r in results:
        by_cat.setdefault(r.category, []).append(r)
    rows = []
    for cat in sorted(by_cat):
        group = by_cat[cat]
        n = len(group)
        rows.append(
            CategoryRow(
                category=cat,
                count=n,
                rmse_t=float(np.mean([g.rmse_t for g in group])),
                scd=float(np.mean([g.scd for g in group])),
                success_rate=float(np.mean([1.0 if g.success else 0.0 for g in group])),
            )
        )
    total = sum(r.count for r in rows)
    all_row = CategoryRow(
        category="All",
        count=total,
        rmse_t=sum(r.rmse_t * r.count for r in rows) / total,
        scd=sum(r.scd * r.count for r in rows) / total,
        success_rate=sum(r.success_rate * r.count for r in rows) / total,
    )
    return CategoryReport(rows=tuple(rows), all_row=all_row)
