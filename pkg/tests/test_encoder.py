import numpy as np
import pytest
import torch

from assemkit.cloud import PointCloud
from assemkit.encoder import (
    AssemblyPoseNet,
    CorrelationFeature,
    EncoderConfig,
    PoseHead,
    VNFeature,
    build_network,
    correlate,
    encode,
    knn_indices,
    project_pose,
    vn_linear,
    vn_nonlinear,
)
from assemkit.transforms import RigidTransform

from conftest import qr_rotation

CFG = EncoderConfig(channels=8, k=4, gate_hidden=6, seed=0)


def torch_cloud(rng, n=24, scale=1.0):
    return torch.from_numpy(rng.normal(size=(1, n, 3)) * scale)


def perturbed_net(seed=0, noise=0.05):
    """Network with all parameters jostled away from their init, so
    structural identities are not tested only at the init point."""
    net = build_network(CFG)
    gen = torch.Generator().manual_seed(999 + seed)
    with torch.no_grad():
        for p in net.parameters():
            p.add_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * noise)
    return net


# ---------------------------------------------------------------------------
# numpy vector-channel primitives


def test_vn_linear_matches_triple_loop(rng):
    feat = VNFeature(rng.normal(size=(5, 3)), "equivariant")
    w = rng.normal(size=(7, 5))
    got = vn_linear(feat, w).values
    for c in range(7):
        for i in range(3):
            expected = sum(w[c, j] * feat.values[j, i] for j in range(5))
            assert abs(got[c, i] - expected) < 1e-12


def test_vn_linear_commutes_with_rotation(rng):
    feat = rng.normal(size=(5, 3))
    w = rng.normal(size=(4, 5))
    r = qr_rotation(rng)
    rotated_first = vn_linear(VNFeature(feat @ r.T, "equivariant"), w).values
    mixed_first = vn_linear(VNFeature(feat, "equivariant"), w).values @ r.T
    assert np.allclose(rotated_first, mixed_first, atol=1e-12)


def test_vn_linear_shape_mismatch_raises(rng):
    feat = VNFeature(rng.normal(size=(5, 3)), "equivariant")
    with pytest.raises(ValueError):
        vn_linear(feat, rng.normal(size=(4, 6)))


def test_vn_nonlinear_rules():
    # one channel, direction = identity mix of itself -> d = v -> dot > 0: pass
    v = np.array([[1.0, 2.0, 3.0]])
    same = vn_nonlinear(VNFeature(v, "equivariant"), np.array([[1.0]]))
    assert np.allclose(same.values, v, atol=1e-12)
    # direction = -v -> dot < 0 -> projection onto plane orthogonal to d
    flipped = vn_nonlinear(VNFeature(v, "equivariant"), np.array([[-1.0]]))
    assert np.allclose(flipped.values, 0.0, atol=1e-9)
    # zero direction passes through unchanged
    two = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    w = np.array([[0.0, 0.0], [0.0, 0.0]])
    kept = vn_nonlinear(VNFeature(two, "equivariant"), w)
    assert np.array_equal(kept.values, two)


def test_vn_nonlinear_output_orthogonal_to_direction(rng):
    feat = rng.normal(size=(6, 3))
    w = rng.normal(size=(6, 6))
    out = vn_nonlinear(VNFeature(feat, "equivariant"), w).values
    d = vn_linear(VNFeature(feat, "equivariant"), w).values
    dots = np.sum(feat * d, axis=1)
    for c in range(6):
        if dots[c] < 0:  # projected channels end up orthogonal to d
            assert abs(np.dot(out[c], d[c])) < 1e-9 * np.linalg.norm(d[c])
        else:
            assert np.array_equal(out[c], feat[c])


def test_vn_nonlinear_is_equivariant(rng):
    feat = rng.normal(size=(6, 3))
    w = rng.normal(size=(6, 6))
    r = qr_rotation(rng)
    a = vn_nonlinear(VNFeature(feat @ r.T, "equivariant"), w).values
    b = vn_nonlinear(VNFeature(feat, "equivariant"), w).values @ r.T
    assert np.allclose(a, b, atol=1e-12)


def test_feature_containers_validate():
    with pytest.raises(ValueError):
        VNFeature(np.zeros((3, 4)), "equivariant")
    with pytest.raises(ValueError):
        VNFeature(np.zeros((3, 3)), "covariant")
    with pytest.raises(ValueError):
        CorrelationFeature(np.zeros((3, 2)))


# ---------------------------------------------------------------------------
# k-NN graph


def test_knn_on_a_line():
    pts = torch.tensor([[[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [10.0, 0, 0]]])
    nbrs = knn_indices(pts, 2)
    assert nbrs[0, 0].tolist() == [1, 2]
    assert nbrs[0, 1].tolist() == [0, 2]
    assert nbrs[0, 2].tolist() == [1, 0]
    assert nbrs[0, 3].tolist() == [2, 1]


def test_knn_tie_breaks_by_lowest_index():
    # points 1 and 2 are equidistant from 0; the lower index must win
    pts = torch.tensor([[[0.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0], [5.0, 0, 0]]])
    nbrs = knn_indices(pts, 1)
    assert nbrs[0, 0].tolist() == [1]
    swapped = torch.tensor([[[0.0, 0, 0], [-1.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0]]])
    assert knn_indices(swapped, 1)[0, 0].tolist() == [1]


def test_knn_excludes_self_and_validates_k(rng):
    pts = torch.from_numpy(rng.normal(size=(2, 10, 3)))
    nbrs = knn_indices(pts, 3)
    assert nbrs.shape == (2, 10, 3)
    own = torch.arange(10).reshape(1, 10, 1)
    assert not (nbrs == own).any()
    with pytest.raises(ValueError):
        knn_indices(pts, 10)


# ---------------------------------------------------------------------------
# encoder contracts (small scale; the acceptance suite re-runs these large)


def test_f_transforms_like_points_g_invariant(rng):
    net = perturbed_net()
    pts = torch_cloud(rng)
    f0, g0, _ = net.encoder(pts)
    for trial in range(5):
        r = qr_rotation(rng)
        t = rng.normal(size=3)
        moved = pts @ torch.from_numpy(r.T) + torch.from_numpy(t)
        f1, g1, _ = net.encoder(moved)
        expected = f0 @ torch.from_numpy(r.T) + torch.from_numpy(t)
        assert torch.allclose(f1, expected, atol=1e-11)
        assert torch.allclose(g1, g0, atol=1e-11)


def test_permutation_invariance(rng):
    net = perturbed_net()
    pts = torch_cloud(rng)
    perm = np.random.default_rng(3).permutation(pts.shape[1])
    f0, g0, _ = net.encoder(pts)
    f1, g1, _ = net.encoder(pts[:, perm])
    assert torch.allclose(f0, f1, atol=1e-12)
    assert torch.allclose(g0, g1, atol=1e-12)


def test_encoder_input_validation(rng):
    net = build_network(CFG)
    with pytest.raises(ValueError):
        net.encoder(torch.zeros(4, 3, dtype=torch.float64))
    with pytest.raises(ValueError):
        net.encoder(torch.zeros(1, CFG.k, 3, dtype=torch.float64))  # needs k+1


# ---------------------------------------------------------------------------
# correlation mixer


def test_correlation_equals_moving_feature_at_init(rng):
    net = build_network(CFG)
    f_mov, _, _ = net.encoder(torch_cloud(rng))
    _, g_fix, _ = net.encoder(torch_cloud(rng))
    c = net.mixer(f_mov, g_fix)
    assert torch.equal(c, f_mov)


def test_correlation_formula_with_nonzero_mixer(rng):
    net = perturbed_net()
    f_mov, _, _ = net.encoder(torch_cloud(rng))
    _, g_fix, _ = net.encoder(torch_cloud(rng))
    c = net.mixer(f_mov, g_fix).detach().numpy()[0]
    f = f_mov.detach().numpy()[0]
    g = g_fix.detach().numpy()[0]
    d = net.mixer.diag.detach().numpy()
    b = net.mixer.bilinear.detach().numpy()
    m = np.diag(d) + g @ b @ g.T
    assert np.allclose(c, m @ f, atol=1e-12)


def test_row_sums_predict_translation_response(rng):
    net = perturbed_net()
    moving = torch_cloud(rng)
    fixed = torch_cloud(rng)
    f_mov, _, _ = net.encoder(moving)
    _, g_fix, _ = net.encoder(fixed)
    c0 = net.mixer(f_mov, g_fix)
    shift = torch.tensor([0.2, -0.7, 0.4], dtype=torch.float64)
    f_shifted, _, _ = net.encoder(moving + shift)
    c1 = net.mixer(f_shifted, g_fix)
    rs = net.mixer.row_sums(g_fix)  # (B, f)
    expected = c0 + rs.unsqueeze(-1) * shift
    assert torch.allclose(c1, expected, atol=1e-10)


def test_correlation_invariant_to_fixed_motion(rng):
    net = perturbed_net()
    moving, fixed = torch_cloud(rng), torch_cloud(rng)
    f_mov, _, _ = net.encoder(moving)
    _, g0, _ = net.encoder(fixed)
    r = qr_rotation(rng)
    t = rng.normal(size=3)
    fixed_moved = fixed @ torch.from_numpy(r.T) + torch.from_numpy(t)
    _, g1, _ = net.encoder(fixed_moved)
    assert torch.allclose(net.mixer(f_mov, g0), net.mixer(f_mov, g1), atol=1e-11)


# ---------------------------------------------------------------------------
# whitening


def test_whiten_is_rotation_equivariant(rng):
    x = torch.from_numpy(rng.normal(size=(2, 16, 3)))
    r = torch.from_numpy(qr_rotation(rng))
    assert torch.allclose(
        PoseHead._whiten(x @ r.T), PoseHead._whiten(x) @ r.T, atol=1e-12
    )


def test_whiten_zero_input_gives_zero():
    x = torch.zeros(1, 8, 3, dtype=torch.float64)
    assert torch.equal(PoseHead._whiten(x), x)


def test_whiten_makes_second_moment_isotropic(rng):
    # moderately anisotropic full-rank input: output spread near-identity.
    # the relative floor keeps each output eigenvalue at l/(l + eps*trace),
    # so the deviation is bounded by eps * trace / l_min ~ 1e-2 here
    x = torch.from_numpy(rng.normal(size=(1, 64, 3)) * np.array([2.0, 1.0, 0.7]))
    y = PoseHead._whiten(x)
    moment = torch.einsum("bfi,bfj->bij", y, y)[0] / 64.0
    assert torch.allclose(moment, torch.eye(3, dtype=torch.float64), atol=2e-2)


def test_whiten_caps_amplification_of_flat_directions(rng):
    # a channel stack that is almost rank-1 must not blow up: the floor
    # limits gain to ~1/sqrt(eps * trace)
    base = np.outer(rng.normal(size=16), [1.0, 0.0, 0.0])
    x = torch.from_numpy((base + rng.normal(scale=1e-9, size=(16, 3)))[None])
    y = PoseHead._whiten(x)
    assert torch.isfinite(y).all()
    gain = float(y.abs().max() / x.abs().max())
    assert gain < 1e3  # raw inverse sqrt of a 1e-18 eigenvalue would be ~1e9


# ---------------------------------------------------------------------------
# pose head + full network


def test_zero_readout_gives_zero_pose_and_degenerate_flag(rng):
    net = build_network(CFG)
    with torch.no_grad():
        net.head.readout.zero_()
    out = net(torch_cloud(rng), torch_cloud(rng))
    assert torch.equal(out["translation"], torch.zeros_like(out["translation"]))
    assert torch.equal(out["rotation6d"], torch.zeros_like(out["rotation6d"]))
    assert bool(out["degenerate"].all())


def test_predicted_rotation_rows_are_orthonormal(rng):
    net = perturbed_net()
    out = net(torch_cloud(rng), torch_cloud(rng))
    rot = out["rotation"][0].detach().numpy()
    assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(rot) - 1.0) < 1e-9


def test_moving_rotation_right_composes(rng):
    # re-orienting the moving part by R multiplies the predicted rotation
    # by R^T and cannot move the predicted translation (the part is still
    # placed at the same spot); holds structurally for any parameters
    net = perturbed_net(seed=2)
    moving, fixed = torch_cloud(rng), torch_cloud(rng)
    out0 = net(moving, fixed)
    r = qr_rotation(rng)
    out1 = net(moving @ torch.from_numpy(r.T), fixed)
    r0 = out0["rotation"][0].detach().numpy()
    r1 = out1["rotation"][0].detach().numpy()
    assert np.allclose(r1, r0 @ r.T, atol=1e-10)
    assert np.allclose(
        out1["translation"][0].detach().numpy(),
        out0["translation"][0].detach().numpy(),
        atol=1e-10,
    )


def test_fixed_rotation_cannot_change_predicted_rotation(rng):
    # the rotation readout sees the fixed part only through invariants
    # (G and the gate statistics), all unchanged by a fixed-part rotation,
    # so the predicted rotation cannot move; holds for any parameters.
    # (A fixed-part *translation* may re-weight channels through the
    # placement-carrying gate statistic - that pathway anchors t.)
    net = perturbed_net(seed=5)
    moving, fixed = torch_cloud(rng), torch_cloud(rng)
    r0 = net(moving, fixed)["rotation"][0].detach().numpy()
    r = qr_rotation(rng)
    r1 = net(moving, fixed @ torch.from_numpy(r.T))["rotation"][0].detach().numpy()
    assert np.allclose(r1, r0, atol=1e-10)


# ---------------------------------------------------------------------------
# functional wrappers over numpy containers


def test_functional_path_matches_forward(rng):
    net = perturbed_net(seed=7)
    m_pts = rng.normal(size=(24, 3))
    f_pts = rng.normal(size=(24, 3))
    out = net(
        torch.from_numpy(m_pts).unsqueeze(0), torch.from_numpy(f_pts).unsqueeze(0)
    )
    f_mov, g_mov = encode(PointCloud(m_pts), net)
    f_fix, g_fix = encode(PointCloud(f_pts), net)
    assert f_mov.kind == "equivariant" and g_fix.kind == "invariant"
    assert np.allclose(f_mov.values, out["f_moving"][0].detach().numpy(), atol=1e-12)
    assert np.allclose(g_fix.values, out["g_fixed"][0].detach().numpy(), atol=1e-12)
    c, passed = correlate(f_mov, g_fix, f_fix, net)
    assert passed is f_fix
    assert np.allclose(c.values, out["correlation"][0].detach().numpy(), atol=1e-12)
    pose = project_pose(c, f_fix, net)
    assert np.allclose(pose.translation, out["translation"][0].detach().numpy(), atol=1e-12)
    assert np.allclose(pose.rotation6d, out["rotation6d"][0].detach().numpy(), atol=1e-12)


def test_functional_path_validates_channels(rng):
    net = build_network(CFG)
    f8 = VNFeature(rng.normal(size=(8, 3)), "equivariant")
    g3 = VNFeature(rng.normal(size=(5, 3)), "invariant")
    with pytest.raises(ValueError):
        correlate(f8, g3, f8, net)
    with pytest.raises(ValueError):
        project_pose(CorrelationFeature(rng.normal(size=(5, 3))), f8, net)


# ---------------------------------------------------------------------------
# configuration / determinism


def test_config_roundtrip():
    cfg = EncoderConfig(channels=12, k=5, gate_hidden=3, seed=9)
    assert EncoderConfig.from_dict(cfg.to_dict()) == cfg


def test_same_seed_same_parameters(rng):
    a = build_network(CFG)
    b = build_network(CFG)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    c = build_network(EncoderConfig(channels=8, k=4, gate_hidden=6, seed=1))
    assert any(
        not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters())
    )


def test_all_parameters_are_float64():
    net = build_network(CFG)
    for p in net.parameters():
        assert p.dtype == torch.float64
