"""
Evaluation Bench Module

Short-term prediction protocol, zero-velocity baseline, long-term export and
the completion/matching ablation harness.

Features:
- Clip selection compatible with the common Human3.6M protocol: per action a
  fresh RandomState(seed), files sorted by subaction, draws interleaved across
  files, split point randint(16, n - 150) + 50
- Clip list files (`action,file_id,start`) to inject a reference selection
- Mean angle error on Euler angles with the global channels excluded, or a
  Euclidean per-frame error for data that is not exponential-map encoded
- ErrorTable with an "Average" row over actions
- Per-clip JSON-lines records and CSV tables
- Ablation over eight configurations; a failing configuration is recorded
  as skipped and the others proceed

Dependencies:
- numpy: Metric math
- pandas: Tables and clip lists
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from tools.completion import (
    Completer,
    build_pair_set,
    compute_vj,
    fit_fn,
    predict_batch,
    predicted_suffix,
)
from tools.decorators import skip_on_error
from tools.errors import ArgumentError, SelectionError, ShapeError
from tools.hs2sae import (
    ArchConfig,
    ModelParams,
    TrainConfig,
    decode_batch,
    draw_windows,
    encode_batch,
    train_autoencoder,
)
from tools.motiondata import GLOBAL_CHANNELS, MotionSequence, NormStats, expmap_frames_to_euler, normalize
from tools.report_writer import write_frames, write_table_csv
from tools.utils import make_rng, ms_to_frame

logger = logging.getLogger(__name__)

HORIZONS_MS = (80, 160, 320, 400)
AVERAGE_ROW = "Average"
CLIP_OFFSET = 50
CLIP_LOW = 16
CLIP_MARGIN = 150

# input window (n, input_frames, channels) + action name -> (n, >= output_frames, channels)
Predictor = Callable[[np.ndarray, str], np.ndarray]


# -------------------------------------------------------------------
# TABLES
# -------------------------------------------------------------------
@dataclass
class ErrorTable:
    """Mean error per action (rows) and horizon in ms (columns), plus an Average row."""

    frame: pd.DataFrame

    @classmethod
    def from_rows(cls, rows: Dict[str, Sequence[float]], horizons_ms: Sequence[int] = HORIZONS_MS) -> "ErrorTable":
        actions = list(rows)
        values = np.array([rows[a] for a in actions], dtype=np.float64).reshape(len(actions), len(horizons_ms))
        if np.any(values < 0):
            raise ArgumentError("error table cells must be non-negative")
        df = pd.DataFrame(values, index=actions, columns=[int(h) for h in horizons_ms])
        df.loc[AVERAGE_ROW] = values.mean(axis=0) if actions else np.nan
        df.index.name = "action"
        return cls(df)

    @property
    def actions(self) -> List[str]:
        return [a for a in self.frame.index if a != AVERAGE_ROW]

    def row(self, action: str) -> np.ndarray:
        return self.frame.loc[action].to_numpy(dtype=np.float64)

    def average(self) -> np.ndarray:
        return self.row(AVERAGE_ROW)

    def to_csv(self, path: Union[str, Path]) -> Path:
        return write_table_csv(self.frame, path)

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> "ErrorTable":
        df = pd.read_csv(path, index_col=0)
        df.columns = [int(c) for c in df.columns]
        return cls(df)


# -------------------------------------------------------------------
# CLIP SELECTION
# -------------------------------------------------------------------
@dataclass
class ClipSelection:
    """
    Held-out clips per action as (file_id, start): the input window is
    frames [start - input_frames, start), the prediction starts at `start`.
    """

    clips: Dict[str, List[Tuple[str, int]]]
    seed: int = 1234567890
    clips_per_action: int = 8

    def __iter__(self):
        for action, entries in self.clips.items():
            for file_id, start in entries:
                yield action, file_id, start

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(list(self), columns=["action", "file_id", "start"])


def select_clips(sequences: Sequence[MotionSequence], actions: Optional[Sequence[str]] = None,
                 clips_per_action: int = 8, seed: int = 1234567890) -> ClipSelection:
    """
    Deterministic clip selection over (downsampled) test sequences.

    Raises:
        SelectionError: If an action has no sequence or a sequence is too short
    """
    by_action: Dict[str, List[MotionSequence]] = {}
    for seq in sequences:
        by_action.setdefault(seq.action, []).append(seq)
    actions = list(actions) if actions else sorted(by_action)

    clips: Dict[str, List[Tuple[str, int]]] = {}
    for action in actions:
        files = sorted(by_action.get(action, []), key=lambda s: (s.subaction or 0, s.subject or 0))
        if not files:
            raise SelectionError(f"no test sequence for action '{action}'")
        for seq in files:
            if len(seq) - CLIP_MARGIN <= CLIP_LOW:
                raise SelectionError(f"{seq.file_id} has {len(seq)} frames, too short for clip selection")
        rng = np.random.RandomState(seed)
        entries: List[Tuple[str, int]] = []
        while len(entries) < clips_per_action:
            for seq in files:
                if len(entries) == clips_per_action:
                    break
                start = int(rng.randint(CLIP_LOW, len(seq) - CLIP_MARGIN)) + CLIP_OFFSET
                entries.append((seq.file_id, start))
        clips[action] = entries
    return ClipSelection(clips, seed, clips_per_action)


def write_clip_list(selection: ClipSelection, path: Union[str, Path]) -> Path:
    return write_table_csv(selection.to_frame(), path, index=False)


def read_clip_list(path: Union[str, Path]) -> ClipSelection:
    """Read an `action,file_id,start` clip list, keeping file order within each action."""
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise SelectionError(f"clip list '{path}' not found")
    missing = {"action", "file_id", "start"} - set(df.columns)
    if missing:
        raise SelectionError(f"clip list '{path}' lacks columns {sorted(missing)}")
    clips: Dict[str, List[Tuple[str, int]]] = {}
    for row in df.itertuples(index=False):
        clips.setdefault(str(row.action), []).append((str(row.file_id), int(row.start)))
    per_action = max((len(v) for v in clips.values()), default=0)
    return ClipSelection(clips, seed=-1, clips_per_action=per_action)


# -------------------------------------------------------------------
# BASELINE AND METRICS
# -------------------------------------------------------------------
def zero_velocity_predict(X: np.ndarray, horizon_frames: int) -> np.ndarray:
    """Repeat the last frame of X (frames along axis -2) horizon_frames times."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2 or X.shape[-2] == 0:
        raise ArgumentError("zero-velocity prediction needs at least one input frame")
    if horizon_frames < 0:
        raise ArgumentError("horizon must be non-negative")
    return np.repeat(X[..., -1:, :], horizon_frames, axis=-2)


def _batch(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[None] if a.ndim == 2 else a


def angle_frame_errors(pred: np.ndarray, gt: np.ndarray, stats: NormStats, convention: str = "zyx",
                       min_gt_std: float = 0.0) -> np.ndarray:
    """
    Per-frame Euler-angle error (N, frames) of normalized predictions.

    Both inputs are denormalized, converted joint by joint to Euler angles,
    and the global translation/rotation channels are zeroed. With
    min_gt_std > 0 only channels whose ground-truth std over the clip
    exceeds it are scored.
    """
    pred, gt = _batch(pred), _batch(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    pred_euler = expmap_frames_to_euler(normalize(pred, stats, "inverse"), convention)
    gt_euler = expmap_frames_to_euler(normalize(gt, stats, "inverse"), convention)
    pred_euler[..., :GLOBAL_CHANNELS] = 0.0
    gt_euler[..., :GLOBAL_CHANNELS] = 0.0
    diff_sq = (pred_euler - gt_euler) ** 2
    if min_gt_std > 0:
        include = gt_euler.std(axis=1, keepdims=True) > min_gt_std
        diff_sq = diff_sq * include
    return np.sqrt(diff_sq.sum(axis=-1))


def euclidean_frame_errors(pred: np.ndarray, gt: np.ndarray, stats: NormStats) -> np.ndarray:
    """Per-frame Euclidean distance (N, frames) in denormalized channel space."""
    pred, gt = _batch(pred), _batch(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    diff = normalize(pred, stats, "inverse") - normalize(gt, stats, "inverse")
    return np.sqrt((diff ** 2).sum(axis=-1))


def horizon_values(frame_errors: np.ndarray, horizons_ms: Sequence[int], fps: float) -> np.ndarray:
    """Pick frame round(h * fps / 1000) (1-based) for every horizon; shape (N, horizons)."""
    frames = [ms_to_frame(h, fps) for h in horizons_ms]
    if any(f < 1 or f > frame_errors.shape[-1] for f in frames):
        raise ArgumentError(f"horizons {list(horizons_ms)} ms need {max(frames)} frames, "
                            f"prediction has {frame_errors.shape[-1]}")
    return frame_errors[..., [f - 1 for f in frames]]


def mean_angle_error(pred: np.ndarray, gt: np.ndarray, stats: NormStats, horizons_ms: Sequence[int] = HORIZONS_MS,
                     fps: float = 25.0, convention: str = "zyx", min_gt_std: float = 0.0) -> np.ndarray:
    """Mean over clips of the Euler-angle error at every horizon."""
    errors = angle_frame_errors(pred, gt, stats, convention, min_gt_std)
    return horizon_values(errors, horizons_ms, fps).mean(axis=0)


def mean_frame_error(pred: np.ndarray, gt: np.ndarray, stats: NormStats, horizons_ms: Sequence[int] = HORIZONS_MS,
                     fps: float = 25.0) -> np.ndarray:
    """Mean over clips of the Euclidean frame error at every horizon."""
    return horizon_values(euclidean_frame_errors(pred, gt, stats), horizons_ms, fps).mean(axis=0)


@dataclass(frozen=True)
class Metric:
    """Frame-error function selected by name ("angle" or "euclidean")."""

    name: str = "angle"
    stats: Optional[NormStats] = None
    convention: str = "zyx"
    min_gt_std: float = 0.0

    def frame_errors(self, pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
        if self.name == "angle":
            return angle_frame_errors(pred, gt, self.stats, self.convention, self.min_gt_std)
        if self.name == "euclidean":
            return euclidean_frame_errors(pred, gt, self.stats)
        raise ArgumentError(f"Unknown metric '{self.name}'")


# -------------------------------------------------------------------
# PREDICTORS
# -------------------------------------------------------------------
def zero_velocity_predictor(output_frames: int) -> Predictor:
    return lambda X, action: zero_velocity_predict(X, output_frames)


def model_predictor(params: ModelParams, cfg: ArchConfig, completer: Optional[Completer], j: int,
                    mode: str = "completion", label_block: Optional[Callable[[str], np.ndarray]] = None,
                    pose_channels: Optional[int] = None) -> Predictor:
    """
    Wrap a trained model as a Predictor.

    The last jτ input frames are encoded (label channels appended through
    `label_block(action)` when the model carries labels), completed by
    `completer` (or decoded directly for the end-to-end baseline when it is
    None) and the predicted suffix is returned without label channels.
    """
    prefix_len = j * cfg.tau

    def predict(X: np.ndarray, action: str) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-2] < prefix_len:
            raise ArgumentError(f"predictor needs {prefix_len} input frames, got {X.shape[-2]}")
        prefix = X[..., -prefix_len:, :]
        if label_block is not None:
            one_hot = label_block(action)
            block = np.broadcast_to(one_hot, prefix.shape[:-1] + one_hot.shape[-1:])
            prefix = np.concatenate([prefix, block], axis=-1)
        if completer is None:
            out = decode_batch(params, cfg, encode_batch(params, cfg, prefix))
        else:
            out = predict_batch(params, cfg, completer, prefix)
        suffix = predicted_suffix(out, j, cfg, mode)
        return suffix[..., :pose_channels] if pose_channels else suffix

    return predict


# -------------------------------------------------------------------
# SHORT-TERM PROTOCOL
# -------------------------------------------------------------------
def _clip_window(dataset: Dict[str, np.ndarray], file_id: str, start: int, input_frames: int, output_frames: int):
    frames = dataset.get(file_id)
    if frames is None:
        raise SelectionError(f"clip references unknown file '{file_id}'")
    if start - input_frames < 0 or start + output_frames > frames.shape[0]:
        raise SelectionError(f"clip {file_id}@{start} exceeds the {frames.shape[0]} available frames")
    return frames[start - input_frames:start], frames[start:start + output_frames]


def evaluate_short_term(predictor: Predictor, dataset: Dict[str, np.ndarray], selection: ClipSelection,
                        input_frames: int, output_frames: int, metric: Metric,
                        horizons_ms: Sequence[int] = HORIZONS_MS, fps: float = 25.0) -> Tuple[ErrorTable, List[dict]]:
    """
    Score a predictor on every selected clip.

    Args:
        dataset: file_id -> normalized pose frames
        metric: Frame-error function

    Returns:
        The per-action ErrorTable and one record per clip

    Raises:
        SelectionError: If a clip references unknown or out-of-range frames
    """
    rows: Dict[str, List[float]] = {}
    records: List[dict] = []
    for action, entries in selection.clips.items():
        windows = [_clip_window(dataset, fid, start, input_frames, output_frames) for fid, start in entries]
        X = np.stack([w[0] for w in windows])
        gt = np.stack([w[1] for w in windows])
        pred = np.asarray(predictor(X, action), dtype=np.float64)
        if pred.ndim != 3 or pred.shape[1] < output_frames:
            raise ShapeError(f"predictor returned {pred.shape}, needs {output_frames} frames per clip")
        values = horizon_values(metric.frame_errors(pred[:, :output_frames], gt), horizons_ms, fps)
        rows[action] = values.mean(axis=0).tolist()
        for (fid, start), clip_values in zip(entries, values):
            record = {"action": action, "file_id": fid, "start": start}
            record.update({f"ms_{h}": float(v) for h, v in zip(horizons_ms, clip_values)})
            records.append(record)
    return ErrorTable.from_rows(rows, horizons_ms), records


# -------------------------------------------------------------------
# LONG-TERM EXPORT
# -------------------------------------------------------------------
def export_long_term(predictor: Predictor, dataset: Dict[str, np.ndarray], selection: ClipSelection,
                     stats: NormStats, metric: Metric, out_dir: Union[str, Path],
                     input_frames: int = 10, output_frames: int = 50) -> List[Path]:
    """
    Write predicted and ground-truth motion (denormalized, one frame per line)
    for every clip plus a per-frame distance curve CSV. A failing clip is
    logged and skipped.
    """
    out_dir = Path(out_dir)

    @skip_on_error("long-term export")
    def export_clip(action: str, file_id: str, start: int) -> Tuple[Path, Path, np.ndarray]:
        X, gt = _clip_window(dataset, file_id, start, input_frames, output_frames)
        pred = np.asarray(predictor(X[None], action), dtype=np.float64)[0, :output_frames]
        stem = f"{action}_{file_id.replace('/', '_')}_{start}"
        pred_path = write_frames(normalize(pred, stats, "inverse"), out_dir / f"{stem}_pred.txt")
        gt_path = write_frames(normalize(gt, stats, "inverse"), out_dir / f"{stem}_gt.txt")
        return pred_path, gt_path, metric.frame_errors(pred, gt)[0]

    written: List[Path] = []
    curves = {}
    for action, file_id, start in selection:
        result, _ = export_clip(action, file_id, start)
        if result is None:
            continue
        pred_path, gt_path, curve = result
        written.extend([pred_path, gt_path])
        curves[f"{action}:{file_id}:{start}"] = curve

    if curves:
        df = pd.DataFrame(curves)
        df.index = pd.RangeIndex(1, len(df) + 1, name="frame")
        written.append(write_table_csv(df, out_dir / "long_term_distance.csv"))
    return written


# -------------------------------------------------------------------
# ABLATION
# -------------------------------------------------------------------
CONFIGURATIONS = (
    "h_seq2seq_x_to_y",
    "h_seq2seq_x_to_xy",
    "basic_add",
    "basic_fn",
    "ours_add_completion",
    "ours_fn_completion",
    "ours_add_matching",
    "ours_fn_matching",
)


@dataclass
class AblationData:
    """Normalized train/test sequences (pose channels only) and how to score them."""

    train: List[np.ndarray]
    test: List[np.ndarray]
    metric: Metric
    fps: float = 25.0


@dataclass
class AblationReport:
    rows: Dict[str, Optional[np.ndarray]] = field(default_factory=dict)
    sigma: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    skipped: Dict[str, str] = field(default_factory=dict)
    records: List[dict] = field(default_factory=list)
    horizons_ms: Tuple[int, ...] = HORIZONS_MS

    def to_frame(self) -> pd.DataFrame:
        out = []
        for name in CONFIGURATIONS:
            values = self.rows.get(name)
            mean_sigma, std_sigma = self.sigma.get(name, (np.nan, np.nan))
            row = {"configuration": name, "status": "ok" if values is not None else "skipped"}
            for i, h in enumerate(self.horizons_ms):
                row[f"ms_{h}"] = float(values[i]) if values is not None else np.nan
            row.update({"mean_sigma": mean_sigma, "std_sigma": std_sigma,
                        "diagnostics": self.skipped.get(name, "")})
            out.append(row)
        return pd.DataFrame(out).set_index("configuration")


def _sigma_summary(sigma: np.ndarray) -> Tuple[float, float]:
    return float(sigma.mean()), float(sigma.std())


def run_ablation(data: AblationData, cfg: ArchConfig, tc: TrainConfig, j: int, vj_samples: int = 1000,
                 eval_windows: int = 256, fn_tc: Optional[TrainConfig] = None,
                 horizons_ms: Sequence[int] = HORIZONS_MS) -> AblationReport:
    """
    Train and score the eight configurations on identical windows and seeds.

    Every configuration predicts the T - jτ frames after a jτ-frame prefix of
    the same held-out windows. ADD/FN completers are fitted on `vj_samples`
    training windows drawn with one seed for all models.
    """
    fn_tc = fn_tc or tc
    report = AblationReport(horizons_ms=tuple(horizons_ms))
    split = j * cfg.tau
    test_windows = draw_windows(data.test, list(range(len(data.test))), eval_windows, cfg,
                                make_rng(tc.seed, "ablation", "test"))
    fit_windows = draw_windows(data.train, list(range(len(data.train))), vj_samples, cfg,
                               make_rng(tc.seed, "ablation", "fit"))
    X, gt = test_windows[:, :split], test_windows[:, split:]

    def score(name: str, pred: np.ndarray):
        values = horizon_values(data.metric.frame_errors(pred, gt), horizons_ms, data.fps)
        report.rows[name] = values.mean(axis=0)
        for w, window_values in enumerate(values):
            record = {"configuration": name, "window": w}
            record.update({f"ms_{h}": float(v) for h, v in zip(horizons_ms, window_values)})
            report.records.append(record)

    @skip_on_error("ablation training")
    def train(variant: str, target: str = "full") -> Tuple[ModelParams, ArchConfig]:
        variant_cfg = ArchConfig(**{**cfg.as_dict(), "variant": variant, "seq2seq_j": j, "seq2seq_target": target})
        params, _ = train_autoencoder(data.train, variant_cfg, tc)
        return params, variant_cfg

    @skip_on_error("ablation configuration")
    def evaluate_completer(name: str, params: ModelParams, variant_cfg: ArchConfig, kind: str, mode: str):
        pairs = build_pair_set(params, variant_cfg, fit_windows, j, mode)
        cv = compute_vj(params, variant_cfg, pairs, j, mode)
        completer: Completer = cv
        sigma = cv.sigma
        if kind == "fn":
            completer = fit_fn(pairs, fn_tc)
            sigma = (pairs.C - completer.apply(pairs.P)).std(axis=0)
        out = predict_batch(params, variant_cfg, completer, X)
        score(name, predicted_suffix(out, j, variant_cfg, mode))
        report.sigma[name] = _sigma_summary(sigma)

    @skip_on_error("ablation configuration")
    def evaluate_direct(name: str, params: ModelParams, variant_cfg: ArchConfig):
        out = decode_batch(params, variant_cfg, encode_batch(params, variant_cfg, X))
        score(name, out[:, split:])

    plan = [
        ("h_seq2seq", "suffix", [("h_seq2seq_x_to_y", None, None)]),
        ("h_seq2seq", "full", [("h_seq2seq_x_to_xy", None, None)]),
        ("basic_pad", "full", [("basic_add", "add", "completion"), ("basic_fn", "fn", "completion")]),
        ("hs2sae", "full", [("ours_add_completion", "add", "completion"), ("ours_fn_completion", "fn", "completion"),
                            ("ours_add_matching", "add", "matching"), ("ours_fn_matching", "fn", "matching")]),
    ]
    for variant, target, configurations in plan:
        logger.info(f"Ablation: training {variant} ({target})")
        trained, diagnostics = train(variant, target)
        for name, kind, mode in configurations:
            if trained is None:
                report.skipped[name] = diagnostics
                continue
            params, variant_cfg = trained
            if kind is None:
                _, problem = evaluate_direct(name, params, variant_cfg)
            else:
                _, problem = evaluate_completer(name, params, variant_cfg, kind, mode)
            if problem:
                report.skipped[name] = problem
                report.rows.pop(name, None)
    return report
