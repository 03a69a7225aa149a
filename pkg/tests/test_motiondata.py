import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tools.errors import ArgumentError, DataError, FormatError, ShapeError, StatsError
from tools.motiondata import (
    LabelVocab,
    MotionSequence,
    NormStats,
    append_label,
    compute_norm_stats,
    downsample,
    euler_to_rotmat,
    expmap_frames_to_euler,
    expmap_to_rotmat,
    load_dataset,
    load_expmap_file,
    normalize,
    parse_path,
    rotmat_to_euler,
    synth_bounds,
    synth_motion,
    window_sample,
)

frame_arrays = arrays(
    np.float64,
    shape=st.tuples(st.integers(5, 20), st.integers(1, 6)),
    elements=st.floats(-10, 10, allow_nan=False, allow_infinity=False),
)


def write_motion(path, frames):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(",".join(f"{v:.6f}" for v in row) for row in frames) + "\n")


def quaternion_rotmat(r):
    """Rotation matrices through unit quaternions."""
    theta = np.linalg.norm(r, axis=-1, keepdims=True)
    axis = r / theta
    w = np.cos(theta[..., 0] / 2)
    x, y, z = (axis * np.sin(theta / 2)).T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], axis=-1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], axis=-1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def community_rotmat2euler(R):
    """The decomposition used by the common Human3.6M evaluation code (non-locked case)."""
    e2 = -np.arcsin(R[0, 2])
    e1 = np.arctan2(R[1, 2] / np.cos(e2), R[2, 2] / np.cos(e2))
    e3 = np.arctan2(R[0, 1] / np.cos(e2), R[0, 0] / np.cos(e2))
    return np.array([e1, e2, e3])


class TestIngestion:
    def test_load_file_with_identifiers(self, tmp_path):
        path = tmp_path / "S5" / "walking_2.txt"
        write_motion(path, [[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])
        seq = load_expmap_file(path)
        assert seq.frames.shape == (2, 3)
        assert (seq.action, seq.subject, seq.subaction) == ("walking", 5, 2)
        assert seq.fps == 50.0
        assert seq.file_id == "S5/walking_2"

    def test_ragged_row_reports_line_number(self, tmp_path):
        path = tmp_path / "S1" / "eating_1.txt"
        path.parent.mkdir()
        path.write_text("1,2,3\n4,5\n")
        with pytest.raises(FormatError, match=":2:"):
            load_expmap_file(path)

    def test_non_numeric_token(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1,2,3\n4,x,6\n")
        with pytest.raises(FormatError, match=":2:"):
            load_expmap_file(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("\n")
        with pytest.raises(FormatError):
            load_expmap_file(path)

    def test_parse_path_without_pattern(self):
        assert parse_path("data/frames.txt") == (None, None, None)
        assert parse_path("root/S11/walkingdog_1.txt") == ("walkingdog", 11, 1)

    def test_dataset_order_does_not_depend_on_workers(self, tmp_path, rng):
        for subject in (1, 5):
            for action in ("walking", "eating"):
                for sub in (1, 2):
                    write_motion(tmp_path / f"S{subject}" / f"{action}_{sub}.txt", rng.normal(size=(4, 3)))
        serial = load_dataset(tmp_path, [1, 5], ["walking"], workers=1)
        parallel = load_dataset(tmp_path, [1, 5], ["walking"], workers=4)
        assert [s.file_id for s in serial] == ["S1/walking_1", "S1/walking_2", "S5/walking_1", "S5/walking_2"]
        assert [s.file_id for s in parallel] == [s.file_id for s in serial]
        for a, b in zip(serial, parallel):
            np.testing.assert_array_equal(a.frames, b.frames)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path / "nope", [1])

    def test_non_finite_frames_rejected(self):
        with pytest.raises(DataError):
            MotionSequence(np.array([[np.nan, 1.0]]), 25.0)


class TestPreprocessing:
    def test_downsample(self, rng):
        seq = MotionSequence(rng.normal(size=(9, 2)), 50.0)
        out = downsample(seq, 2)
        np.testing.assert_array_equal(out.frames, seq.frames[::2])
        assert out.fps == 25.0 and len(out) == 5

    def test_constant_channel_is_dropped_and_restored(self, rng):
        frames = rng.normal(size=(30, 3))
        frames[:, 1] = 0.7
        stats = compute_norm_stats([MotionSequence(frames, 25.0)])
        assert stats.keep_mask.tolist() == [True, False, True]
        forward = normalize(frames, stats)
        assert forward.shape == (30, 2)
        np.testing.assert_allclose(forward.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(forward.std(axis=0), 1.0)
        np.testing.assert_allclose(normalize(forward, stats, "inverse"), frames, atol=1e-12)

    def test_unit_range_spans_minus_one_to_one(self, rng):
        frames = rng.normal(size=(40, 4))
        stats = compute_norm_stats([MotionSequence(frames, 25.0)], scheme="unit_range")
        forward = normalize(frames, stats)
        np.testing.assert_allclose(forward.min(axis=0), -1.0)
        np.testing.assert_allclose(forward.max(axis=0), 1.0)

    @given(frame_arrays, st.sampled_from(["zscore", "unit_range"]))
    @settings(max_examples=50, deadline=None)
    def test_normalization_round_trip(self, frames, scheme):
        assume(np.all(frames.std(axis=0) > 1e-2))
        stats = compute_norm_stats([MotionSequence(frames, 25.0)], scheme=scheme)
        restored = normalize(normalize(frames, stats), stats, "inverse")
        np.testing.assert_allclose(restored, frames, rtol=1e-9, atol=1e-9)

    @given(frame_arrays, st.lists(st.floats(0.0, 20.0), min_size=2, max_size=5))
    @settings(max_examples=50, deadline=None)
    def test_raising_the_threshold_never_adds_channels(self, frames, thresholds):
        masks = [compute_norm_stats([MotionSequence(frames, 25.0)], ignore_threshold=t).keep_mask
                 for t in sorted(thresholds)]
        for looser, tighter in zip(masks, masks[1:]):
            assert not np.any(tighter & ~looser)

    def test_channel_mismatch(self, rng):
        stats = compute_norm_stats([MotionSequence(rng.normal(size=(10, 3)), 25.0)])
        with pytest.raises(ShapeError):
            normalize(np.zeros((2, 4)), stats)
        with pytest.raises(ShapeError):
            normalize(np.zeros((2, 4)), stats, "inverse")

    def test_zero_std_kept_channel(self):
        stats = NormStats(np.zeros(2), np.array([1.0, 0.0]), -np.ones(2), np.ones(2), np.array([True, True]))
        with pytest.raises(StatsError):
            normalize(np.zeros((1, 2)), stats)

    def test_empty_training_set(self):
        with pytest.raises(ArgumentError):
            compute_norm_stats([])

    def test_append_label(self):
        vocab = LabelVocab(("walking", "sitting", "eating"))
        out = append_label(np.zeros((2, 2)), 1, vocab)
        np.testing.assert_array_equal(out[:, 2:], [[0, 1, 0], [0, 1, 0]])
        masked = append_label(np.zeros((2, 2)), LabelVocab.MASKED, vocab)
        assert masked.shape == (2, 5) and not masked[:, 2:].any()

    def test_unknown_action(self):
        with pytest.raises(ArgumentError):
            LabelVocab(("a", "b")).index("c")

    def test_window_sample_draws_once(self, rng):
        frames = np.arange(50.0)[:, None]
        seed_rng = np.random.default_rng(99)
        window = window_sample(frames, T=10, j=3, tau=2, rng=seed_rng)
        expected_start = int(np.random.default_rng(99).integers(0, 41))
        assert window.start == expected_start
        assert window.X.shape == (6, 1) and window.Y.shape == (4, 1)
        np.testing.assert_array_equal(window.full[:, 0], np.arange(expected_start, expected_start + 10))

    @pytest.mark.parametrize("T,j,tau,length", [(10, 0, 2, 50), (10, 6, 2, 50), (10, 1, 3, 50), (10, 1, 2, 9)])
    def test_window_sample_rejects(self, T, j, tau, length):
        with pytest.raises(ArgumentError):
            window_sample(np.zeros((length, 2)), T, j, tau, np.random.default_rng(0))


class TestRotations:
    def test_rodrigues_matches_quaternion_oracle(self):
        r = np.random.default_rng(0).uniform(-np.pi, np.pi, size=(10000, 3))
        assert np.abs(expmap_to_rotmat(r) - quaternion_rotmat(r)).max() <= 1e-10

    def test_zero_vector_is_identity(self):
        np.testing.assert_array_equal(expmap_to_rotmat(np.zeros(3)), np.eye(3))

    @given(arrays(np.float64, 3, elements=st.floats(-10, 10, allow_nan=False)))
    @settings(max_examples=100, deadline=None)
    def test_rotation_is_orthonormal(self, r):
        R = expmap_to_rotmat(r)
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-10)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("convention", ["zyx", "xyz"])
    def test_euler_round_trip(self, convention):
        R = expmap_to_rotmat(np.random.default_rng(1).uniform(-3, 3, size=(2000, 3)))
        s = -R[:, 2, 0] if convention == "zyx" else R[:, 0, 2]
        R = R[np.abs(s) < 1 - 1e-6]
        back = euler_to_rotmat(rotmat_to_euler(R, convention), convention)
        assert np.abs(back - R).max() <= 1e-8

    def test_xyz_is_negated_community_decomposition(self):
        R = expmap_to_rotmat(np.random.default_rng(2).uniform(-2, 2, size=(200, 3)))
        ours = rotmat_to_euler(R, "xyz")
        reference = np.stack([community_rotmat2euler(m) for m in R])
        np.testing.assert_allclose(ours, -reference, atol=1e-10)

    def test_gimbal_lock_sets_roll_to_zero(self):
        R = euler_to_rotmat(np.array([0.3, np.pi / 2, 0.0]), "zyx")
        angles = rotmat_to_euler(R, "zyx")
        assert angles[2] == 0.0
        assert angles[1] == pytest.approx(np.pi / 2)
        np.testing.assert_allclose(euler_to_rotmat(angles, "zyx"), R, atol=1e-12)

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ArgumentError):
            rotmat_to_euler(2.0 * np.eye(3))

    def test_unknown_convention(self):
        with pytest.raises(ArgumentError):
            rotmat_to_euler(np.eye(3), "yxz")

    def test_frames_conversion_passes_translation_through(self, rng):
        frames = rng.normal(size=(4, 9))
        out = expmap_frames_to_euler(frames)
        np.testing.assert_array_equal(out[:, :3], frames[:, :3])
        np.testing.assert_allclose(out[:, 3:6], rotmat_to_euler(expmap_to_rotmat(frames[:, 3:6])))
        with pytest.raises(ShapeError):
            expmap_frames_to_euler(np.zeros((2, 7)))


class TestSynthetic:
    def test_deterministic_and_bounded(self):
        a = synth_motion("sine_walk", 8, 100, seed=5)
        b = synth_motion("sine_walk", 8, 100, seed=5)
        np.testing.assert_array_equal(a.frames, b.frames)
        lo, hi = synth_bounds()
        assert a.frames.min() >= lo and a.frames.max() <= hi
        assert a.action == "sine_walk" and a.fps == 25.0

    def test_families_differ(self):
        walk = synth_motion("sine_walk", 4, 50, seed=1)
        sit = synth_motion("sine_sit", 4, 50, seed=1)
        assert not np.allclose(walk.frames, sit.frames)

    def test_unknown_family(self):
        with pytest.raises(ArgumentError):
            synth_motion("sine_run", 4, 10, seed=0)
