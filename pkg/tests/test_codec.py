import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from assemkit.codec import (
    N_BINS,
    DegenerateRotationError,
    PoseTokens,
    PoseVector9,
    bins_to_values,
    detokenize,
    detokenize_vector,
    pose_to_vector,
    rotation_from_6d,
    rotation_to_6d,
    tokenize,
    vector_to_pose,
)
from assemkit.transforms import InvalidRotationError, RigidTransform, geodesic_angle

from conftest import assert_rotation, qr_rotation

unit_interval = st.floats(-1.0, 1.0, allow_nan=False, width=64)


def make_vector(values):
    values = np.asarray(values, dtype=np.float64)
    return PoseVector9(values[:3], values[3:])


# ---------------------------------------------------------------------------
# 6D rotation representation


def test_rotation_6d_is_first_two_columns(rng):
    r = qr_rotation(rng)
    six = rotation_to_6d(r)
    assert np.array_equal(six[:3], r[:, 0])
    assert np.array_equal(six[3:], r[:, 1])


def test_rotation_6d_roundtrip(rng):
    for _ in range(50):
        r = qr_rotation(rng)
        back = rotation_from_6d(rotation_to_6d(r))
        assert np.allclose(back, r, atol=1e-12)


def test_rotation_from_6d_gram_schmidt_on_noisy_input(rng):
    r = qr_rotation(rng)
    noisy = rotation_to_6d(r) + rng.normal(scale=1e-3, size=6)
    back = rotation_from_6d(noisy)
    assert_rotation(back, tol=1e-12)
    assert geodesic_angle(back, r) < 0.01


def test_rotation_to_6d_rejects_invalid(rng):
    with pytest.raises(InvalidRotationError):
        rotation_to_6d(np.eye(3) * 1.5)


def test_rotation_from_6d_degenerate_raises():
    with pytest.raises(DegenerateRotationError):
        rotation_from_6d(np.zeros(6))
    parallel = np.array([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])
    with pytest.raises(DegenerateRotationError):
        rotation_from_6d(parallel)


# ---------------------------------------------------------------------------
# PoseVector9 / scaling / clipping


def test_pose_to_vector_scales_translation(rng):
    r = qr_rotation(rng)
    t = RigidTransform(r, np.array([0.5, -0.25, 2.0]))
    vec = pose_to_vector(t, translation_scale=4.0)
    assert np.allclose(vec.translation, [0.125, -0.0625, 0.5], atol=1e-15)
    assert vec.saturation_count == 0
    back = vector_to_pose(vec, translation_scale=4.0)
    assert np.allclose(back.translation, t.translation, atol=1e-12)
    assert np.allclose(back.rotation, r, atol=1e-12)


def test_pose_to_vector_clips_and_counts():
    t = RigidTransform(np.eye(3), np.array([3.0, -2.0, 0.1]))
    vec = pose_to_vector(t, translation_scale=1.0)
    assert vec.saturation_count == 2
    assert vec.translation[0] == 1.0
    assert vec.translation[1] == -1.0


def test_pose_vector_validation():
    with pytest.raises(ValueError):
        PoseVector9(np.zeros(2), np.zeros(6))
    with pytest.raises(ValueError):
        PoseVector9(np.zeros(3), np.zeros(5))
    vec = make_vector(np.linspace(-0.9, 0.9, 9))
    assert np.array_equal(vec.values(), np.concatenate([vec.translation, vec.rotation6d]))
    with pytest.raises(ValueError):
        vec.translation[0] = 0.0


# ---------------------------------------------------------------------------
# binning (201 bins over [-1, 1], half-up rounding)


@pytest.mark.parametrize(
    "value,expected_bin",
    [
        (-1.0, 0),
        (1.0, N_BINS - 1),
        (0.0, (N_BINS - 1) // 2),
        (-0.985, 2),     # exact midpoint 1.5 rounds up (half-up)
        (-0.9951, 0),    # just below the 0/1 midpoint
        (-0.9949, 1),    # just above it
        (2.0, N_BINS - 1),   # out-of-range input clips
        (-2.0, 0),
    ],
)
def test_bin_assignment(value, expected_bin):
    vec = make_vector([value] + [0.0] * 8)
    assert tokenize(vec).bins[0] == expected_bin


def test_bins_decode_to_bin_centers():
    tokens = PoseTokens(tuple([0, 100, 200] + [100] * 6))
    vals = bins_to_values(tokens)
    assert vals[0] == -1.0
    assert vals[1] == 0.0
    assert vals[2] == 1.0


@given(st.lists(unit_interval, min_size=9, max_size=9))
def test_roundtrip_error_within_half_bin(values):
    vec = make_vector(values)
    back = detokenize_vector(tokenize(vec))
    assert np.all(np.abs(back.values() - vec.values()) <= 0.005 + 1e-12)


@given(st.lists(st.integers(0, N_BINS - 1), min_size=9, max_size=9))
def test_tokenize_detokenize_idempotent(bins):
    tokens = PoseTokens(tuple(bins))
    again = tokenize(detokenize_vector(tokens))
    assert again.bins == tokens.bins


# ---------------------------------------------------------------------------
# token container / text / bytes


def test_exactly_nine_tokens():
    with pytest.raises(ValueError):
        PoseTokens(tuple(range(8)))
    with pytest.raises(ValueError):
        PoseTokens(tuple([0] * 10))
    with pytest.raises(ValueError):
        PoseTokens(tuple([0] * 8 + [N_BINS]))  # out of vocabulary
    with pytest.raises(ValueError):
        PoseTokens(tuple([0] * 8 + [-1]))


def test_text_format_and_roundtrip():
    tokens = PoseTokens((0, 1, 22, 100, 150, 199, 200, 42, 7))
    text = tokens.text()
    assert text.count("<assemble_pose_") == 9
    assert "<assemble_pose_22>" in text
    assert PoseTokens.from_text(text).bins == tokens.bins


def test_from_text_rejects_garbage():
    with pytest.raises(ValueError):
        PoseTokens.from_text(" ".join(["<assemble_pose_1>"] * 8))  # only 8
    with pytest.raises(ValueError):
        PoseTokens.from_text("hello " + " ".join(["<assemble_pose_1>"] * 9))
    with pytest.raises(ValueError):
        PoseTokens.from_text(" ".join(["<assemble_pose_999>"] + ["<assemble_pose_1>"] * 8))


def test_bytes_layout_is_u16_little_endian():
    tokens = PoseTokens((0, 1, 2, 3, 4, 5, 6, 7, 200))
    blob = tokens.to_bytes()
    assert len(blob) == 18
    assert struct.unpack("<9H", blob) == (0, 1, 2, 3, 4, 5, 6, 7, 200)
    assert PoseTokens.from_bytes(blob).bins == tokens.bins
    with pytest.raises(ValueError):
        PoseTokens.from_bytes(blob[:-1])


# ---------------------------------------------------------------------------
# end-to-end pose round-trip


def test_pose_roundtrip_bounds(rng):
    scale = 2.0
    worst_t, worst_r = 0.0, 0.0
    for _ in range(200):
        pose = RigidTransform(qr_rotation(rng), rng.uniform(-scale, scale, size=3))
        back = detokenize(tokenize(pose_to_vector(pose, scale)), scale)
        assert_rotation(back.rotation, tol=1e-9)
        worst_t = max(worst_t, float(np.max(np.abs(back.translation - pose.translation))))
        worst_r = max(worst_r, geodesic_angle(back.rotation, pose.rotation))
    assert worst_t <= 0.005 * scale + 1e-12  # half a bin per axis, times scale
    assert worst_r < 0.02


def test_identity_tokens_are_symmetric():
    vec = pose_to_vector(RigidTransform.identity())
    tokens = tokenize(vec)
    # identity: t = 0 -> center bin; 6d = (1,0,0,0,1,0)
    assert tokens.bins == (100, 100, 100, 200, 100, 100, 100, 200, 100)
    back = detokenize(tokens)
    assert np.allclose(back.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(back.translation, 0.0, atol=1e-12)
