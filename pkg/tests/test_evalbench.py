import numpy as np
import pandas as pd
import pytest

from conftest import TINY
from tools import evalbench
from tools.completion import build_pair_set, compute_vj
from tools.errors import ArgumentError, SelectionError, ShapeError
from tools.evalbench import (
    AVERAGE_ROW,
    CONFIGURATIONS,
    AblationData,
    ClipSelection,
    ErrorTable,
    Metric,
    angle_frame_errors,
    euclidean_frame_errors,
    evaluate_short_term,
    export_long_term,
    horizon_values,
    mean_angle_error,
    model_predictor,
    read_clip_list,
    run_ablation,
    select_clips,
    write_clip_list,
    zero_velocity_predict,
    zero_velocity_predictor,
)
from tools.hs2sae import ArchConfig, TrainConfig, init_params
from tools.motiondata import LabelVocab, MotionSequence, normalize


def _sequence(action, subaction, length, channels=9):
    return MotionSequence(np.zeros((length, channels)), 25.0, action=action, subject=5, subaction=subaction)


class TestZeroVelocity:
    def test_repeats_the_last_frame(self, rng):
        X = rng.normal(size=(3, 5, 4))
        out = zero_velocity_predict(X, 7)
        assert out.shape == (3, 7, 4)
        np.testing.assert_array_equal(out, np.repeat(X[:, -1:], 7, axis=1))

    def test_needs_an_input_frame(self):
        with pytest.raises(ArgumentError):
            zero_velocity_predict(np.zeros((0, 4)), 3)


class TestClipSelection:
    def test_matches_the_reference_draw_order(self):
        # subaction 2 is listed first but sorts second
        sequences = [_sequence("walking", 2, 300), _sequence("walking", 1, 400)]
        selection = select_clips(sequences, ["walking"], clips_per_action=8, seed=1234567890)

        files = [sequences[1], sequences[0]]
        rng = np.random.RandomState(1234567890)
        expected = []
        for k in range(8):
            seq = files[k % 2]
            expected.append((seq.file_id, int(rng.randint(16, len(seq) - 150)) + 50))
        assert selection.clips["walking"] == expected

    def test_each_action_restarts_the_generator(self):
        sequences = [_sequence("walking", 1, 400), _sequence("eating", 1, 400)]
        selection = select_clips(sequences, clips_per_action=4)
        starts = lambda a: [s for _, s in selection.clips[a]]
        assert starts("walking") == starts("eating")
        assert list(selection.clips) == ["eating", "walking"]

    def test_short_sequence_rejected(self):
        with pytest.raises(SelectionError):
            select_clips([_sequence("walking", 1, 166)], ["walking"])

    def test_missing_action_rejected(self):
        with pytest.raises(SelectionError):
            select_clips([_sequence("walking", 1, 400)], ["smoking"])

    def test_clip_list_round_trip(self, tmp_path):
        selection = select_clips([_sequence("walking", 1, 400), _sequence("walking", 2, 400)], clips_per_action=3)
        path = write_clip_list(selection, tmp_path / "clips.csv")
        assert read_clip_list(path).clips == selection.clips

    def test_clip_list_errors(self, tmp_path):
        with pytest.raises(SelectionError):
            read_clip_list(tmp_path / "missing.csv")
        pd.DataFrame({"action": ["walking"], "start": [60]}).to_csv(tmp_path / "bad.csv", index=False)
        with pytest.raises(SelectionError):
            read_clip_list(tmp_path / "bad.csv")


class TestMetrics:
    def test_horizon_frames_at_25_fps(self):
        errors = np.arange(1.0, 13.0)[None]
        np.testing.assert_array_equal(horizon_values(errors, (80, 160, 320, 400), 25.0), [[2.0, 4.0, 8.0, 10.0]])

    def test_horizon_beyond_prediction_rejected(self):
        with pytest.raises(ArgumentError):
            horizon_values(np.zeros((1, 5)), (400,), 25.0)

    def test_global_channels_are_ignored(self, rng, random_stats):
        gt = rng.normal(size=(2, 10, 9))
        pred = gt.copy()
        pred[..., :6] += rng.normal(size=(2, 10, 6))
        np.testing.assert_allclose(angle_frame_errors(pred, gt, random_stats), 0.0, atol=1e-12)

    @pytest.mark.parametrize("convention", ["zyx", "xyz"])
    def test_single_joint_rotation(self, random_stats, convention):
        raw_gt = np.zeros((1, 4, 9))
        raw_pred = raw_gt.copy()
        raw_pred[..., 8] = 0.3
        pred, gt = normalize(raw_pred, random_stats), normalize(raw_gt, random_stats)
        errors = angle_frame_errors(pred, gt, random_stats, convention)
        np.testing.assert_allclose(errors, 0.3, atol=1e-9)

    def test_low_variance_channels_excluded(self, random_stats):
        raw_gt = np.zeros((1, 4, 9))
        raw_pred = raw_gt.copy()
        raw_pred[..., 8] = 0.3
        pred, gt = normalize(raw_pred, random_stats), normalize(raw_gt, random_stats)
        np.testing.assert_allclose(angle_frame_errors(pred, gt, random_stats, min_gt_std=1e-4), 0.0)

    @pytest.mark.parametrize("convention", ["zyx", "xyz"])
    def test_angle_error_is_a_symmetric_distance(self, rng, random_stats, convention):
        gt = rng.normal(size=(4, 10, 9)) * 0.3
        pred = gt + rng.normal(size=gt.shape) * 0.3
        forward = mean_angle_error(pred, gt, random_stats, convention=convention)
        np.testing.assert_array_equal(forward, mean_angle_error(gt, pred, random_stats, convention=convention))
        assert np.all(forward > 0)
        np.testing.assert_array_equal(angle_frame_errors(gt, gt, random_stats, convention), 0.0)

        # a single non-global channel off in one frame is seen only there
        moved = gt.copy()
        moved[0, 5, 7] += 0.2
        errors = angle_frame_errors(moved, gt, random_stats, convention)
        assert errors[0, 5] > 0
        errors[0, 5] = 0.0
        np.testing.assert_array_equal(errors, 0.0)

    def test_mean_angle_error_averages_clips(self, rng, random_stats):
        gt = rng.normal(size=(3, 10, 9)) * 0.1
        pred = gt + rng.normal(size=gt.shape) * 0.1
        frame_errors = angle_frame_errors(pred, gt, random_stats)
        np.testing.assert_allclose(mean_angle_error(pred, gt, random_stats),
                                   frame_errors[:, [1, 3, 7, 9]].mean(axis=0))

    def test_euclidean_distance_in_raw_space(self, random_stats):
        raw_gt = np.zeros((1, 2, 9))
        raw_pred = raw_gt.copy()
        raw_pred[..., 0], raw_pred[..., 1] = 3.0, 4.0
        errors = euclidean_frame_errors(normalize(raw_pred, random_stats), normalize(raw_gt, random_stats),
                                        random_stats)
        np.testing.assert_allclose(errors, 5.0)

    def test_shape_mismatch(self, random_stats):
        with pytest.raises(ShapeError):
            euclidean_frame_errors(np.zeros((1, 2, 9)), np.zeros((1, 3, 9)), random_stats)

    def test_unknown_metric(self, random_stats):
        with pytest.raises(ArgumentError):
            Metric("cosine", random_stats).frame_errors(np.zeros((1, 2, 9)), np.zeros((1, 2, 9)))


class TestErrorTable:
    def test_average_row(self):
        table = ErrorTable.from_rows({"walking": [1.0, 2.0], "eating": [3.0, 4.0]}, (80, 160))
        np.testing.assert_allclose(table.average(), [2.0, 3.0])
        assert table.actions == ["walking", "eating"]

    def test_negative_cell_rejected(self):
        with pytest.raises(ArgumentError):
            ErrorTable.from_rows({"walking": [-1.0]}, (80,))

    def test_csv_round_trip(self, tmp_path):
        table = ErrorTable.from_rows({"walking": [0.25, 0.5, 0.75, 1.0]})
        loaded = ErrorTable.read_csv(table.to_csv(tmp_path / "table.csv"))
        assert list(loaded.frame.columns) == [80, 160, 320, 400]
        np.testing.assert_allclose(loaded.row(AVERAGE_ROW), [0.25, 0.5, 0.75, 1.0])


class TestShortTerm:
    @pytest.fixture
    def constant_data(self):
        seq = _sequence("walking", 1, 300)
        selection = ClipSelection({"walking": [(seq.file_id, 100), (seq.file_id, 200)]})
        return {seq.file_id: np.ones((300, 9))}, selection

    def test_zero_velocity_on_constant_motion_scores_zero(self, constant_data, random_stats):
        dataset, selection = constant_data
        table, records = evaluate_short_term(zero_velocity_predictor(10), dataset, selection, 50, 10,
                                             Metric("euclidean", random_stats))
        np.testing.assert_allclose(table.row("walking"), 0.0)
        assert len(records) == 2
        assert set(records[0]) == {"action", "file_id", "start", "ms_80", "ms_160", "ms_320", "ms_400"}

    def test_unknown_file(self, constant_data, random_stats):
        dataset, _ = constant_data
        selection = ClipSelection({"walking": [("S5/walking_9", 100)]})
        with pytest.raises(SelectionError):
            evaluate_short_term(zero_velocity_predictor(10), dataset, selection, 50, 10,
                                Metric("euclidean", random_stats))

    def test_clip_out_of_range(self, constant_data, random_stats):
        dataset, _ = constant_data
        selection = ClipSelection({"walking": [("S5/walking_1", 295)]})
        with pytest.raises(SelectionError):
            evaluate_short_term(zero_velocity_predictor(10), dataset, selection, 50, 10,
                                Metric("euclidean", random_stats))

    def test_short_predictions_rejected(self, constant_data, random_stats):
        dataset, selection = constant_data
        with pytest.raises(ShapeError):
            evaluate_short_term(zero_velocity_predictor(5), dataset, selection, 50, 10,
                                Metric("euclidean", random_stats))


def test_long_term_export_skips_failing_clips(tmp_path, rng, random_stats):
    frames = rng.normal(size=(120, 9))
    selection = ClipSelection({"walking": [("S5/walking_1", 20), ("S5/walking_7", 20), ("S5/walking_1", 60)]})
    written = export_long_term(zero_velocity_predictor(50), {"S5/walking_1": frames}, selection, random_stats,
                               Metric("euclidean", random_stats), tmp_path)
    assert len(written) == 5
    assert all(p.exists() for p in written)
    curves = pd.read_csv(tmp_path / "long_term_distance.csv", index_col=0)
    assert curves.shape == (50, 2)
    gt = np.loadtxt(tmp_path / "walking_S5_walking_1_20_gt.txt", delimiter=",")
    np.testing.assert_allclose(gt, normalize(frames[20:70], random_stats, "inverse"), atol=1e-7)


class TestModelPredictor:
    def test_returns_the_predicted_suffix(self, tiny_params, tiny_cfg, rng):
        cv = compute_vj(tiny_params, tiny_cfg, build_pair_set(tiny_params, tiny_cfg, rng.normal(size=(5, 4, 4)), 1), 1)
        predict = model_predictor(tiny_params, tiny_cfg, cv, 1)
        assert predict(rng.normal(size=(3, 6, 4)), "walking").shape == (3, 2, 4)

    def test_label_channels_are_appended_and_dropped(self, rng):
        cfg = ArchConfig(**{**TINY, "features": 6})
        params = init_params(cfg, np.random.default_rng(5))
        vocab = LabelVocab(("walking", "eating"))
        seen = []

        def label_block(action):
            seen.append(action)
            return vocab.one_hot(vocab.index(action))

        predict = model_predictor(params, cfg, None, 1, label_block=label_block, pose_channels=4)
        out = predict(rng.normal(size=(3, 6, 4)), "eating")
        assert out.shape == (3, 2, 4)
        assert seen == ["eating"]

    def test_too_few_input_frames(self, tiny_params, tiny_cfg):
        predict = model_predictor(tiny_params, tiny_cfg, None, 2)
        with pytest.raises(ArgumentError):
            predict(np.zeros((1, 2, 4)), "walking")


class TestAblation:
    @pytest.fixture
    def data(self, normalized):
        sequences, stats = normalized
        frames = [s.frames for s in sequences]
        return AblationData(frames[:4], frames[4:], Metric("euclidean", stats))

    def run(self, data, tiny_cfg, tiny_train_config):
        return run_ablation(data, tiny_cfg, tiny_train_config, j=1, vj_samples=8, eval_windows=6,
                            fn_tc=TrainConfig(epochs=1, batch=4), horizons_ms=(40, 80))

    def test_all_configurations_scored(self, data, tiny_cfg, tiny_train_config):
        report = self.run(data, tiny_cfg, tiny_train_config)
        frame = report.to_frame()
        assert list(frame.index) == list(CONFIGURATIONS)
        assert (frame["status"] == "ok").all()
        assert frame[["ms_40", "ms_80"]].notna().all().all()
        assert len(report.records) == 8 * 6
        completer_rows = [n for n in CONFIGURATIONS if not n.startswith("h_seq2seq")]
        assert frame.loc[completer_rows, "mean_sigma"].notna().all()

    def test_failing_configuration_is_skipped(self, data, tiny_cfg, tiny_train_config, monkeypatch):
        def broken(*args, **kwargs):
            raise RuntimeError("fn fit exploded")

        monkeypatch.setattr(evalbench, "fit_fn", broken)
        frame = self.run(data, tiny_cfg, tiny_train_config).to_frame()
        skipped = frame.index[frame["status"] == "skipped"]
        assert sorted(skipped) == ["basic_fn", "ours_fn_completion", "ours_fn_matching"]
        assert frame.loc["basic_fn", "diagnostics"] == "RuntimeError: fn fit exploded"
        assert (frame["status"] == "ok").sum() == 5
