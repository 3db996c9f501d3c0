"""Geometry warm-up training: L1 translation + geodesic rotation losses,
deterministic SGD, finite-difference gradient verification, and pose
prediction from a trained network.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import save_network
from .cloud import PointCloud, farthest_point_sample
from .codec import DegenerateRotationError, PoseVector9, rotation_from_6d
from .encoder import GS_EPS, AssemblyPoseNet, EncoderConfig, build_network
from .planner import AssemblyStep
from .transforms import RigidTransform, random_se3

ACOS_CLAMP = 1e-7  # keeps arccos differentiable; deviates <= ~4.5e-4 rad at the endpoints


class TrainDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch_index: int):
        self.epoch = epoch
        self.batch_index = batch_index
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}")


# ---------------------------------------------------------------------------
# Losses (torch forms used in training; scalar wrappers for direct calls)


def loss_translation_t(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-sample L1: sum of absolute component errors. (B, 3) -> (B,)"""
    return (pred - target).abs().sum(dim=-1)


def loss_geodesic_t(r_pred: torch.Tensor, r_target: torch.Tensor) -> torch.Tensor:
    """Per-sample geodesic angle between rotations, in radians. (B,3,3) -> (B,)"""
    trace = torch.einsum("bij,bij->b", r_pred, r_target)
    cos = torch.clamp((trace - 1.0) / 2.0, -1.0 + ACOS_CLAMP, 1.0 - ACOS_CLAMP)
    return torch.acos(cos)


def loss_translation(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    return float(np.abs(pred - target).sum())


def loss_geodesic(r_pred: np.ndarray, r_target: np.ndarray) -> float:
    # np.array (not asarray): torch refuses the read-only views RigidTransform holds
    rp = torch.from_numpy(np.array(r_pred, dtype=np.float64).reshape(1, 3, 3))
    rt = torch.from_numpy(np.array(r_target, dtype=np.float64).reshape(1, 3, 3))
    return float(loss_geodesic_t(rp, rt)[0])


def rotation_from_6d_t(six: torch.Tensor) -> torch.Tensor:
    """Differentiable Gram-Schmidt decode, (B, 6) -> (B, 3, 3) with the two
    vectors as the first two columns. Degenerate inputs are guarded by a
    clamped denominator instead of raising."""
    a1, a2 = six[:, :3], six[:, 3:]
    n1 = torch.clamp(torch.linalg.vector_norm(a1, dim=-1, keepdim=True), min=GS_EPS)
    b1 = a1 / n1
    a2p = a2 - (b1 * a2).sum(dim=-1, keepdim=True) * b1
    n2 = torch.clamp(torch.linalg.vector_norm(a2p, dim=-1, keepdim=True), min=GS_EPS)
    b2 = a2p / n2
    b3 = torch.linalg.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


# ---------------------------------------------------------------------------
# Configuration and records


@dataclass(frozen=True)
class WarmupConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 60
    seed: int = 0
    rotation_limit_degrees: float | None = None
    translation_limit: float = 1.0
    w_trans: float = 1.0
    w_rot: float = 1.0
    momentum: float = 0.9
    channels: int = 32
    k: int = 16
    gate_hidden: int = 16
    train_points: int = 256
    augment: bool = False
    lr_patience: int = 50
    lr_factor: float = 0.5
    min_lr: float = 1e-5
    # relative improvement below which a validation loss still counts as
    # a plateau; without it, oscillation noise keeps resetting the
    # counter and the halving rule never fires
    lr_threshold: float = 1e-4
    val_fraction: float = 0.1
    # global-norm gradient clip; the Gram-Schmidt and arccos denominators
    # form cliffs that momentum would otherwise launch off. 0 disables.
    grad_clip: float = 1.0

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs, self.w_trans, self.w_rot) <= 0:
            raise ValueError("learning rate, batch size, epochs and loss weights must be positive")
        if self.rotation_limit_degrees is not None and self.rotation_limit_degrees < 0:
            raise ValueError("rotation limit must be nonnegative")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            channels=self.channels, k=self.k, gate_hidden=self.gate_hidden, seed=self.seed
        )

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "rotation_limit_degrees": self.rotation_limit_degrees,
            "translation_limit": self.translation_limit,
            "w_trans": self.w_trans,
            "w_rot": self.w_rot,
            "momentum": self.momentum,
            "channels": self.channels,
            "k": self.k,
            "gate_hidden": self.gate_hidden,
            "train_points": self.train_points,
            "augment": self.augment,
            "lr_patience": self.lr_patience,
            "lr_factor": self.lr_factor,
            "min_lr": self.min_lr,
            "lr_threshold": self.lr_threshold,
            "val_fraction": self.val_fraction,
            "grad_clip": self.grad_clip,
        }

    @staticmethod
    def from_dict(d: dict) -> "WarmupConfig":
        limit = d.get("rotation_limit_degrees")
        return WarmupConfig(
            learning_rate=float(d["learning_rate"]),
            batch_size=int(d["batch_size"]),
            epochs=int(d["epochs"]),
            seed=int(d["seed"]),
            rotation_limit_degrees=None if limit is None else float(limit),
            translation_limit=float(d.get("translation_limit", 1.0)),
            w_trans=float(d.get("w_trans", 1.0)),
            w_rot=float(d.get("w_rot", 1.0)),
            momentum=float(d.get("momentum", 0.9)),
            channels=int(d.get("channels", 32)),
            k=int(d.get("k", 16)),
            gate_hidden=int(d.get("gate_hidden", 16)),
            train_points=int(d.get("train_points", 256)),
            augment=bool(d.get("augment", False)),
            lr_patience=int(d.get("lr_patience", 50)),
            lr_factor=float(d.get("lr_factor", 0.5)),
            min_lr=float(d.get("min_lr", 1e-5)),
            lr_threshold=float(d.get("lr_threshold", 1e-4)),
            val_fraction=float(d.get("val_fraction", 0.1)),
            grad_clip=float(d.get("grad_clip", 1.0)),
        )


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    step: int
    loss_total: float
    loss_trans: float
    loss_rot: float
    grad_norm: float
    # wall-clock seconds; kept in memory only and excluded from to_dict()
    # so serialized training logs are reproducible across runs
    wall_time: float = field(compare=False, default=0.0)

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "grad_norm": self.grad_norm,
            "loss_rot": self.loss_rot,
            "loss_total": self.loss_total,
            "loss_trans": self.loss_trans,
            "step": self.step,
        }


# ---------------------------------------------------------------------------
# Dataset preparation


def _prepare_tensors(dataset: list[AssemblyStep], train_points: int):
    moving, fixed, canonical, t_gt, r_gt = [], [], [], [], []
    for step in dataset:
        n = min(train_points, len(step.moving_cloud), len(step.fixed_cloud))
        mov = farthest_point_sample(step.moving_cloud, n)
        fix = farthest_point_sample(step.fixed_cloud, n)
        moving.append(mov.points)
        fixed.append(fix.points)
        canonical.append(step.target_pose.apply(mov).points)
        t_gt.append(step.target_pose.translation)
        r_gt.append(step.target_pose.rotation)
    return (
        torch.from_numpy(np.stack(moving)),
        torch.from_numpy(np.stack(fixed)),
        torch.from_numpy(np.stack(canonical)),
        torch.from_numpy(np.stack(t_gt)),
        torch.from_numpy(np.stack(r_gt)),
    )


def _object_split(groups: list[str], val_fraction: float, seed: int):
    """Hold out ~val_fraction of distinct objects. With too few objects to
    hold any out, validation falls back to the full training set."""
    unique = sorted(set(groups))
    rng = np.random.default_rng([seed, 0x5B17])
    perm = rng.permutation(len(unique))
    n_val = int(round(val_fraction * len(unique)))
    val_objects = {unique[i] for i in perm[:n_val]}
    train_idx = [i for i, g in enumerate(groups) if g not in val_objects]
    val_idx = [i for i, g in enumerate(groups) if g in val_objects]
    if not val_idx:
        val_idx = list(train_idx)
    if not train_idx:
        raise ValueError("validation split consumed every object; dataset too small")
    return train_idx, val_idx


def _batched_loss(net: AssemblyPoseNet, mov, fix, t_gt, r_gt, w_trans, w_rot):
    out = net(mov, fix)
    r_pred = rotation_from_6d_t(out["rotation6d"])
    l_trans = loss_translation_t(out["translation"], t_gt).mean()
    l_rot = loss_geodesic_t(r_pred, r_gt).mean()
    return w_trans * l_trans + w_rot * l_rot, l_trans, l_rot


def train_warmup(
    dataset: list[AssemblyStep],
    config: WarmupConfig,
    groups: list[str] | None = None,
    checkpoint_path=None,
) -> tuple[AssemblyPoseNet, list[TrainRecord]]:
    """Minibatch SGD on w_trans * L1 + w_rot * geodesic.

    ``groups`` assigns each step to an object so the validation split
    holds out whole objects (default: every step is its own object).
    Deterministic given (dataset, config): fixed shuffle order, fixed
    reduction order, plateau-halved learning rate, best-by-validation
    parameters restored (and written to ``checkpoint_path`` if given).
    When ``config.augment`` is set, each epoch re-randomizes every
    training pose within the configured limits instead of reusing the
    stored perturbation.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if groups is None:
        groups = [str(i) for i in range(len(dataset))]
    if len(groups) != len(dataset):
        raise ValueError("groups must align with dataset")

    mov, fix, canon, t_gt, r_gt = _prepare_tensors(dataset, config.train_points)
    train_idx, val_idx = _object_split(groups, config.val_fraction, config.seed)
    net = build_network(config.encoder_config())
    optimizer = torch.optim.SGD(
        net.parameters(), lr=config.learning_rate, momentum=config.momentum
    )
    max_angle = None
    if config.rotation_limit_degrees is not None:
        max_angle = math.radians(config.rotation_limit_degrees)

    records: list[TrainRecord] = []
    best_val = float("inf")
    best_state = {k: v.clone() for k, v in net.state_dict().items()}
    plateau = 0
    plateau_best = float("inf")
    lr = config.learning_rate
    global_step = 0
    started = time.perf_counter()

    val_mov, val_fix = mov[val_idx], fix[val_idx]
    val_t, val_r = t_gt[val_idx], r_gt[val_idx]

    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, 1 + epoch])
        order = rng.permutation(len(train_idx))

        if config.augment:
            epoch_mov = torch.empty_like(mov[train_idx])
            epoch_t = torch.empty_like(t_gt[train_idx])
            epoch_r = torch.empty_like(r_gt[train_idx])
            for row, idx in enumerate(train_idx):
                t_rand = random_se3(
                    rng, max_angle=max_angle, max_translation=config.translation_limit
                )
                inv = t_rand.inverse()
                epoch_mov[row] = torch.from_numpy(inv.apply(canon[idx].numpy()))
                # np.array: transform fields are read-only views torch rejects
                epoch_t[row] = torch.from_numpy(np.array(t_rand.translation))
                epoch_r[row] = torch.from_numpy(np.array(t_rand.rotation))
            epoch_fix = fix[train_idx]
        else:
            epoch_mov, epoch_fix = mov[train_idx], fix[train_idx]
            epoch_t, epoch_r = t_gt[train_idx], r_gt[train_idx]

        for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
            rows = order[start : start + config.batch_size]
            optimizer.zero_grad()
            total, l_trans, l_rot = _batched_loss(
                net,
                epoch_mov[rows],
                epoch_fix[rows],
                epoch_t[rows],
                epoch_r[rows],
                config.w_trans,
                config.w_rot,
            )
            if not torch.isfinite(total):
                raise TrainDivergedError(epoch, batch_index)
            total.backward()
            grad_norm = math.sqrt(
                sum(float((p.grad * p.grad).sum()) for p in net.parameters() if p.grad is not None)
            )
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
            optimizer.step()
            global_step += 1
            records.append(
                TrainRecord(
                    epoch=epoch,
                    step=global_step,
                    loss_total=float(total.detach()),
                    loss_trans=float(l_trans.detach()),
                    loss_rot=float(l_rot.detach()),
                    grad_norm=grad_norm,
                    wall_time=time.perf_counter() - started,
                )
            )

        with torch.no_grad():
            val_total, _, _ = _batched_loss(
                net, val_mov, val_fix, val_t, val_r, config.w_trans, config.w_rot
            )
        val_loss = float(val_total)
        if val_loss < best_val:
            best_val = val_loss
            best_state = {k: v.clone() for k, v in net.state_dict().items()}
        # plateau counting requires a relative improvement so oscillation
        # noise cannot postpone the halving forever
        if val_loss < plateau_best * (1.0 - config.lr_threshold):
            plateau_best = val_loss
            plateau = 0
        else:
            plateau += 1
            if plateau > config.lr_patience and lr > config.min_lr:
                lr = max(lr * config.lr_factor, config.min_lr)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                plateau = 0

    net.load_state_dict(best_state)
    if checkpoint_path is not None:
        save_network(checkpoint_path, net, extra_config={"warmup": config.to_dict()})
    return net, records


# ---------------------------------------------------------------------------
# Prediction


def predict(
    net: AssemblyPoseNet, step: AssemblyStep, points: int = 256
) -> tuple[RigidTransform, PoseVector9]:
    """Pose for one step: (decoded rigid transform, raw 9D head output).

    Inputs are subsampled the same way training does. A degenerate
    rotation readout (untrained or zeroed head) falls back to identity.
    """
    n = min(points, len(step.moving_cloud), len(step.fixed_cloud))
    # .copy(): cloud arrays are read-only and torch wants writable memory
    mov = farthest_point_sample(step.moving_cloud, n).points.copy()
    fix = farthest_point_sample(step.fixed_cloud, n).points.copy()
    with torch.no_grad():
        out = net(torch.from_numpy(mov).unsqueeze(0), torch.from_numpy(fix).unsqueeze(0))
    trans = out["translation"][0].numpy()
    six = out["rotation6d"][0].numpy()
    vector = PoseVector9(trans, six)
    # decode through the codec's exact Gram-Schmidt so the returned
    # rotation is orthonormal even when the head's floored normalization
    # emitted a slightly off-unit matrix
    try:
        rotation = rotation_from_6d(six)
    except DegenerateRotationError:
        rotation = np.eye(3)
    return RigidTransform(rotation, trans), vector


# ---------------------------------------------------------------------------
# Gradient verification


def grad_check(
    loss_fn,
    params: list[torch.Tensor],
    epsilon: float = 1e-6,
    n_coords: int = 64,
    seed: int = 0,
) -> float:
    """Max relative error between autograd and central finite differences.

    Coordinates are sampled from every parameter tensor (at least one
    each, at least ``n_coords`` total). A coordinate that lands on a
    nonlinearity boundary — detected as a large mismatch — is retried
    after a small seeded re-perturbation of all parameters rather than
    failed outright.
    """
    if not params:
        raise ValueError("no parameters to check")
    rng = np.random.default_rng(seed)
    per_tensor = max(1, -(-n_coords // len(params)))
    coords = []
    for t_i, p in enumerate(params):
        n = p.numel()
        take = min(per_tensor, n)
        for flat in sorted(rng.choice(n, size=take, replace=False).tolist()):
            coords.append((t_i, int(flat)))

    def measure(offsets: list[np.ndarray] | None):
        saved = [p.detach().clone() for p in params]
        if offsets is not None:
            with torch.no_grad():
                for p, off in zip(params, offsets):
                    p.add_(torch.from_numpy(off).reshape(p.shape))
        for p in params:
            p.grad = None
        loss = loss_fn()
        loss.backward()
        grads = [p.grad.detach().clone() for p in params]
        results = {}
        for t_i, flat in coords:
            p = params[t_i]
            original = float(p.detach().reshape(-1)[flat])
            with torch.no_grad():
                p.reshape(-1)[flat] = original + epsilon
                f_plus = float(loss_fn())
                p.reshape(-1)[flat] = original - epsilon
                f_minus = float(loss_fn())
                p.reshape(-1)[flat] = original
            g_fd = (f_plus - f_minus) / (2.0 * epsilon)
            g_an = float(grads[t_i].reshape(-1)[flat])
            results[(t_i, flat)] = abs(g_an - g_fd) / max(1e-8, abs(g_fd))
        with torch.no_grad():
            for p, s in zip(params, saved):
                p.copy_(s)
        return results

    errors = measure(None)
    suspects = [c for c, err in errors.items() if err > 1e-4]
    for attempt in range(2):
        if not suspects:
            break
        noise_rng = np.random.default_rng([seed, 1000 + attempt])
        offsets = [
            noise_rng.normal(scale=1e-4, size=p.numel()).astype(np.float64) for p in params
        ]
        retried = measure(offsets)
        for c in suspects:
            errors[c] = min(errors[c], retried[c])
        suspects = [c for c in suspects if errors[c] > 1e-4]
    return max(errors.values())
