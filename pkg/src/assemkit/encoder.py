"""SE(3)-equivariant point-cloud encoder with a pose-prediction head.

Features are vector-channel matrices (channels x 3): a rotation of the
input acts on every channel by left multiplication, so linear channel
mixing and the direction-gated nonlinearity preserve equivariance by
construction. The encoder produces an equivariant feature F (translation
handled by centroid subtraction / re-addition) and an invariant feature G
built from channel inner products. A correlation feature C modulates the
moving part's F by a channel-mixing matrix derived from the fixed part's
G, and the head reads the 9D pose out of (C, F_fixed) through
invariant-gated equivariant readouts.

All tensors are float64 and all reductions run single-threaded so results
are reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .cloud import PointCloud

torch.set_num_threads(1)

VN_EPS = 1e-12  # regularizer for the nonlinearity's direction norm
VN_ZERO_DIR = 1e-20  # below this squared norm the direction is treated as absent
GS_EPS = 1e-8  # degeneracy guard in the head's orthonormalization
NORM_EPS = 1e-12  # smooth-sqrt guard for invariant gate features
WHITEN_EPS = 1e-3  # relative eigenvalue floor for readout whitening
WHITEN_ITERS = 14  # Newton-Schulz steps for the 3x3 inverse square root

DTYPE = torch.float64


# ---------------------------------------------------------------------------
# Spec-level feature containers (numpy facing)


@dataclass(frozen=True)
class VNFeature:
    """A (channels x 3) vector-valued feature, tagged by how it transforms."""

    values: np.ndarray
    kind: str  # "equivariant" | "invariant"

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"feature must be (channels, 3), got {v.shape}")
        if self.kind not in ("equivariant", "invariant"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CorrelationFeature:
    """Fixed/moving correlation: equivariant to the moving part, invariant
    to the fixed part."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"correlation must be (channels, 3), got {v.shape}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


# ---------------------------------------------------------------------------
# Standalone vector-channel primitives (numpy; the torch layers mirror them)


def vn_linear(feature: VNFeature, weights: np.ndarray) -> VNFeature:
    """Channel mixing: output channel c = sum_j W[c, j] * feature[j].

    Acts on the channel dimension only, never on the 3 spatial
    coordinates, so it commutes with input rotation exactly.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != feature.channels:
        raise ValueError(
            f"weights {weights.shape} do not match {feature.channels} input channels"
        )
    return VNFeature(weights @ feature.values, feature.kind)


def vn_nonlinear(feature: VNFeature, direction_weights: np.ndarray) -> VNFeature:
    """Direction-gated nonlinearity.

    Each channel's direction d is a learned channel mix of the feature;
    where <v, d> >= 0 the channel passes unchanged, otherwise v is
    projected onto the plane orthogonal to d. Because d co-rotates with
    v, the rule is rotation-equivariant. A zero-norm direction passes the
    channel through.
    """
    d = vn_linear(feature, direction_weights).values
    v = feature.values
    dot = np.sum(v * d, axis=1, keepdims=True)
    d_sq = np.sum(d * d, axis=1, keepdims=True)
    projected = v - (dot / (d_sq + VN_EPS)) * d
    out = np.where(dot >= 0.0, v, projected)
    out = np.where(d_sq < VN_ZERO_DIR, v, out)
    return VNFeature(out, feature.kind)


# ---------------------------------------------------------------------------
# Torch building blocks


def _vn_linear_t(x: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    # x: (..., C_in, 3), weight: (C_out, C_in)
    return torch.einsum("oc,...ci->...oi", weight, x)


def _vn_relu_t(x: torch.Tensor, dir_weight: torch.Tensor) -> torch.Tensor:
    d = _vn_linear_t(x, dir_weight)
    dot = (x * d).sum(dim=-1, keepdim=True)
    d_sq = (d * d).sum(dim=-1, keepdim=True)
    projected = x - (dot / (d_sq + VN_EPS)) * d
    out = torch.where(dot >= 0.0, x, projected)
    return torch.where(d_sq < VN_ZERO_DIR, x, out)


def _init_uniform(shape, fan_in: int, gen: torch.Generator) -> nn.Parameter:
    bound = 1.0 / float(np.sqrt(fan_in))
    data = (torch.rand(*shape, generator=gen, dtype=DTYPE) * 2.0 - 1.0) * bound
    return nn.Parameter(data)


def knn_indices(points: torch.Tensor, k: int) -> torch.Tensor:
    """k nearest neighbors per point (self excluded), ties broken by
    lowest point index via a stable sort. points: (B, N, 3) -> (B, N, k)."""
    b, n, _ = points.shape
    if k >= n:
        raise ValueError(f"k-NN graph needs more than k={k} points, got {n}")
    sq = (points * points).sum(dim=-1)
    d2 = sq[:, :, None] + sq[:, None, :] - 2.0 * points @ points.transpose(1, 2)
    eye = torch.eye(n, dtype=torch.bool).unsqueeze(0)
    d2 = d2.masked_fill(eye, float("inf"))
    order = torch.argsort(d2, dim=-1, stable=True)
    return order[:, :, :k]


class VNEdgeConv(nn.Module):
    """Edge convolution over a fixed k-NN graph.

    Edge feature for (i, j) is concat(x_j - x_i, x_i) on the channel
    axis; a channel mix plus the gated nonlinearity is mean-pooled over
    each point's neighbors.
    """

    def __init__(self, c_in: int, c_out: int, gen: torch.Generator):
        super().__init__()
        self.weight = _init_uniform((c_out, 2 * c_in), 2 * c_in, gen)
        self.dir_weight = _init_uniform((c_out, c_out), c_out, gen)

    def forward(self, x: torch.Tensor, nbrs: torch.Tensor) -> torch.Tensor:
        # x: (B, N, C, 3), nbrs: (B, N, k)
        b, n, c, _ = x.shape
        k = nbrs.shape[-1]
        batch_idx = torch.arange(b).reshape(b, 1, 1)
        gathered = x[batch_idx, nbrs]  # (B, N, k, C, 3)
        center = x.unsqueeze(2).expand(b, n, k, c, 3)
        edge = torch.cat([gathered - center, center], dim=3)
        h = _vn_linear_t(edge, self.weight)
        h = _vn_relu_t(h, self.dir_weight)
        return h.mean(dim=2)


class EquivariantEncoder(nn.Module):
    """Two stacked edge-conv blocks, global mean pooling, dual outputs.

    Returns (F, G, F_centered): F is the equivariant global feature with
    the centroid re-added per channel (so translation acts additively); G
    is invariant, built as Gram rows of the centered feature pushed
    through a learned channel-to-anchor map; F_centered is F before the
    centroid re-addition.
    """

    def __init__(self, channels: int, k: int, gen: torch.Generator):
        super().__init__()
        self.channels = channels
        self.k = k
        self.conv1 = VNEdgeConv(1, channels, gen)
        self.conv2 = VNEdgeConv(channels, channels, gen)
        self.anchor_weight = _init_uniform((3, channels), channels, gen)

    def forward(self, points: torch.Tensor):
        # points: (B, N, 3)
        if points.dim() != 3 or points.shape[-1] != 3:
            raise ValueError(f"points must be (B, N, 3), got {tuple(points.shape)}")
        if points.shape[1] < self.k + 1:
            raise ValueError(
                f"need at least k+1 = {self.k + 1} points, got {points.shape[1]}"
            )
        centroid = points.mean(dim=1)
        centered = points - centroid.unsqueeze(1)
        nbrs = knn_indices(centered, self.k)
        x = centered.unsqueeze(2)  # (B, N, 1, 3)
        x = self.conv1(x, nbrs)
        x = self.conv2(x, nbrs)
        f_cent = x.mean(dim=1)  # (B, f, 3)
        # Gram rows divided by the mean squared channel norm (a rotation-
        # and translation-invariant scale): G becomes an O(1) interface
        # whatever the raw feature amplitude. Unnormalized, G entries go
        # as the square of the feature scale and every parameter reading G
        # sees gradients suppressed by that square.
        s2 = (f_cent * f_cent).sum(dim=-1).mean(dim=1)[:, None, None] + NORM_EPS
        anchors = torch.einsum("af,bfi->bai", self.anchor_weight, f_cent)
        g = torch.einsum("bfi,bai->bfa", f_cent, anchors) / s2
        f_full = f_cent + centroid.unsqueeze(1)
        return f_full, g, f_cent


class CorrelationMixer(nn.Module):
    """C = M(G_fixed) . F_moving with M = diag(d) + G B G^T.

    B is 3x3 on the invariant feature's coordinate axes, so M is built
    from invariant numbers only and C inherits the moving part's
    equivariance exactly. Initialized to the identity mixer (d = 1,
    B = 0), for which C equals F_moving.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.diag = nn.Parameter(torch.ones(channels, dtype=DTYPE))
        self.bilinear = nn.Parameter(torch.zeros(3, 3, dtype=DTYPE))

    def forward(self, f_moving: torch.Tensor, g_fixed: torch.Tensor) -> torch.Tensor:
        inner = torch.einsum("bfi,bfj->bij", g_fixed, f_moving)  # G^T F
        mixed = torch.einsum("ij,bjk->bik", self.bilinear, inner)
        return self.diag[None, :, None] * f_moving + torch.einsum(
            "bfi,bik->bfk", g_fixed, mixed
        )

    def row_sums(self, g_fixed: torch.Tensor) -> torch.Tensor:
        """Per-channel row sums of M; a moving-part translation t shifts
        channel c of C by row_sums[c] * t."""
        col = g_fixed.sum(dim=1)  # G^T 1
        lifted = torch.einsum("bfi,ij,bj->bf", g_fixed, self.bilinear, col)
        return self.diag[None, :] + lifted


class PoseHead(nn.Module):
    """Invariant-gated equivariant readouts -> rotation + translation.

    Per channel, rotation-invariant statistics of (C, F_fixed) pass
    through a shared tanh MLP to gate four static channel-weight rows;
    the gated weights form four readout 3-vectors. Two of them are
    orthonormalized into the rows of the predicted rotation (so a
    rotation R of the moving input right-composes: R_pred -> R_pred R^T),
    and the translation is anchor-minus-rotated-attachment:
    t = u_fixed - R_pred v_moving. Degenerate readouts (near-zero or
    near-parallel) yield a zero 6D slot instead of dividing by zero.
    """

    def __init__(self, channels: int, gate_hidden: int, gen: torch.Generator):
        super().__init__()
        self.gate_w1 = _init_uniform((gate_hidden, 4), 4, gen)
        self.gate_b1 = _init_uniform((gate_hidden,), 4, gen)
        self.gate_w2 = _init_uniform((4, gate_hidden), gate_hidden, gen)
        self.gate_b2 = _init_uniform((4,), gate_hidden, gen)
        self.readout = _init_uniform((4, channels), channels, gen)

    @staticmethod
    def _safe_norm(x: torch.Tensor) -> torch.Tensor:
        return torch.sqrt((x * x).sum(dim=-1) + NORM_EPS)

    @staticmethod
    def _whiten(x: torch.Tensor) -> torch.Tensor:
        """Equalize a centered (B, f, 3) feature's spread in all 3 spatial
        directions: right-multiply the channel vectors by the inverse
        square root of their 3x3 second-moment matrix.

        The inverse square root conjugates under rotation, so whitened
        channels stay exactly equivariant. Without it the channel vectors
        are near-collinear (for parts with 180-degree symmetries they are
        collinear up to sampling noise), which leaves the two-vector
        rotation readout in an ill-conditioned canyon that plain SGD
        crawls through. The floor WHITEN_EPS caps how much a nearly-flat
        direction is amplified; Newton-Schulz keeps the map a smooth
        matrix polynomial (no eigendecomposition, so gradients are stable
        even with repeated eigenvalues).
        """
        second = torch.einsum("bfi,bfj->bij", x, x) / x.shape[1]  # (B, 3, 3)
        eye = torch.eye(3, dtype=x.dtype, device=x.device).expand_as(second)
        trace = second.diagonal(dim1=-2, dim2=-1).sum(-1)[:, None, None]
        moment = second + (WHITEN_EPS * trace + 3.0 * NORM_EPS) * eye
        scale = moment.diagonal(dim1=-2, dim2=-1).sum(-1)[:, None, None]
        a = moment / scale
        y, z = a, eye
        for _ in range(WHITEN_ITERS):
            t = 0.5 * (3.0 * eye - z @ y)
            y = y @ t
            z = t @ z
        inv_sqrt = z / torch.sqrt(scale)
        return torch.einsum("bfj,bji->bfi", x, inv_sqrt)

    def forward(self, c_feat: torch.Tensor, f_fixed: torch.Tensor):
        c_mean = c_feat.mean(dim=1, keepdim=True)
        f_mean = f_fixed.mean(dim=1, keepdim=True)
        # mean-centering C for the rotation readouts suppresses the
        # per-channel translation shift (uniform when the mixer is near
        # identity) without breaking rotation equivariance
        c_centered = c_feat - c_mean
        f_centered = f_fixed - f_mean
        # the centered (shape) component is whitened so the readout
        # interface is O(1) and isotropic whatever the raw feature
        # magnitude or anisotropy. The positional component (channel
        # mean, which carries the part's absolute placement) is already
        # cloud-scale and is re-added unnormalized.
        c_unit = self._whiten(c_centered)
        f_unit = self._whiten(f_centered)
        z = torch.stack(
            [
                self._safe_norm(c_unit),
                self._safe_norm(f_unit),
                (c_unit * c_mean).sum(dim=-1),
                (f_unit * f_mean).sum(dim=-1),
            ],
            dim=-1,
        )  # (B, f, 4)
        hidden = torch.tanh(torch.einsum("hz,bfz->bfh", self.gate_w1, z) + self.gate_b1)
        # unit offset: with small random init the raw gate output is near
        # zero, and a product of two near-zero factors (gate x readout row)
        # is a gradient dead zone that traps whole readout pathways.
        # Gating around 1 keeps the readout rows trainable from the start.
        gates = 1.0 + torch.einsum("gh,bfh->bfg", self.gate_w2, hidden) + self.gate_b2

        w = self.readout[None, :, :] * gates.permute(0, 2, 1)  # (B, 4, f)
        u1 = torch.einsum("bf,bfi->bi", w[:, 0], c_unit)
        u2 = torch.einsum("bf,bfi->bi", w[:, 1], c_unit)
        v_mov = torch.einsum("bf,bfi->bi", w[:, 2], c_unit + c_mean)
        u_fix = torch.einsum("bf,bfi->bi", w[:, 3], f_unit + f_mean)

        n1 = torch.linalg.vector_norm(u1, dim=-1, keepdim=True)
        r1 = u1 / torch.clamp(n1, min=GS_EPS)
        u2_perp = u2 - (u2 * r1).sum(dim=-1, keepdim=True) * r1
        n2 = torch.linalg.vector_norm(u2_perp, dim=-1, keepdim=True)
        r2 = u2_perp / torch.clamp(n2, min=GS_EPS)
        r3 = torch.linalg.cross(r1, r2, dim=-1)
        rot = torch.stack([r1, r2, r3], dim=1)  # rows

        degenerate = (n1 < GS_EPS) | (n2 < GS_EPS)  # (B, 1)
        six = torch.cat([rot[:, :, 0], rot[:, :, 1]], dim=-1)
        six = torch.where(degenerate, torch.zeros_like(six), six)
        trans = u_fix - torch.einsum("bij,bj->bi", rot, v_mov)
        return trans, six, rot, degenerate.squeeze(-1)


@dataclass(frozen=True)
class EncoderConfig:
    """Shape and seeding of the full network."""

    channels: int = 64
    k: int = 16
    gate_hidden: int = 16
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "k": self.k,
            "gate_hidden": self.gate_hidden,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "EncoderConfig":
        return EncoderConfig(
            channels=int(d["channels"]),
            k=int(d["k"]),
            gate_hidden=int(d["gate_hidden"]),
            seed=int(d["seed"]),
        )


class AssemblyPoseNet(nn.Module):
    """Shared encoder for both parts + correlation mixer + pose head."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        gen = torch.Generator()
        gen.manual_seed(int(config.seed))
        self.encoder = EquivariantEncoder(config.channels, config.k, gen)
        self.mixer = CorrelationMixer(config.channels)
        self.head = PoseHead(config.channels, config.gate_hidden, gen)

    def forward(self, moving: torch.Tensor, fixed: torch.Tensor) -> dict:
        f_mov, _, _ = self.encoder(moving)
        f_fix, g_fix, _ = self.encoder(fixed)
        c_feat = self.mixer(f_mov, g_fix)
        trans, six, rot, degenerate = self.head(c_feat, f_fix)
        return {
            "translation": trans,
            "rotation6d": six,
            "rotation": rot,
            "degenerate": degenerate,
            "correlation": c_feat,
            "f_moving": f_mov,
            "f_fixed": f_fix,
            "g_fixed": g_fix,
        }


def build_network(config: EncoderConfig) -> AssemblyPoseNet:
    return AssemblyPoseNet(config)


# ---------------------------------------------------------------------------
# Spec-level operations over the numpy containers


def _to_batch(points: np.ndarray) -> torch.Tensor:
    # np.array: the containers hold read-only views torch refuses
    return torch.from_numpy(np.array(points, dtype=np.float64)).unsqueeze(0)


def encode(cloud: PointCloud, net: AssemblyPoseNet) -> tuple[VNFeature, VNFeature]:
    """Global features of one cloud: (equivariant F, invariant G)."""
    with torch.no_grad():
        f, g, _ = net.encoder(_to_batch(cloud.points))
    return (
        VNFeature(f[0].numpy(), "equivariant"),
        VNFeature(g[0].numpy(), "invariant"),
    )


def correlate(
    f_moving: VNFeature,
    g_fixed: VNFeature,
    f_fixed: VNFeature,
    net: AssemblyPoseNet,
) -> tuple[CorrelationFeature, VNFeature]:
    """Correlation feature C plus the fixed feature passed through."""
    if not (f_moving.channels == g_fixed.channels == f_fixed.channels):
        raise ValueError("channel counts of F_moving, G_fixed, F_fixed must match")
    with torch.no_grad():
        c = net.mixer(
            torch.from_numpy(f_moving.values).unsqueeze(0),
            torch.from_numpy(g_fixed.values).unsqueeze(0),
        )
    return CorrelationFeature(c[0].numpy()), f_fixed


def project_pose(c: CorrelationFeature, f_fixed: VNFeature, net: AssemblyPoseNet):
    """Raw (pre-clamp) 9D pose read out of the correlation feature."""
    from .codec import PoseVector9

    if c.values.shape[0] != f_fixed.channels:
        raise ValueError("correlation and fixed feature channel counts must match")
    with torch.no_grad():
        trans, six, _, _ = net.head(
            torch.from_numpy(c.values).unsqueeze(0),
            torch.from_numpy(f_fixed.values).unsqueeze(0),
        )
    return PoseVector9(trans[0].numpy(), six[0].numpy())
