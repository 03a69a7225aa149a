"""
Motion Data Module

Ingestion, preprocessing and windowing of skeleton motion sequences stored as
exponential-map joint angles, plus the rotation conversions used by the
evaluation metric and a deterministic synthetic motion generator.

Features:
- Parses `S<subject>/<action>_<subaction>.txt` files (one frame per line,
  comma-separated decimals) with line-numbered format errors
- Parallel ingestion of a dataset directory with an ordered merge
- Downsampling, per-channel statistics, zscore / unit_range normalization
- One-hot action labels appended to every frame (or all-zero when masked)
- Random fixed-length windows split into prefix X and suffix Y
- Exponential map -> rotation matrix -> Euler angles (zyx or xyz)
- Sine-based synthetic families (sine_walk, sine_sit)

Dependencies:
- numpy: Array math and seeded random generators
"""

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from tools.errors import ArgumentError, DataError, FormatError, ShapeError, StatsError

logger = logging.getLogger(__name__)

# -------------------------------------------------------------------
# CONSTANTS
# -------------------------------------------------------------------
H36M_FPS = 50.0
H36M_ACTIONS = (
    "walking", "eating", "smoking", "discussion", "directions",
    "greeting", "phoning", "posing", "purchases", "sitting",
    "sittingdown", "takingphoto", "waiting", "walkingdog", "walkingtogether",
)
GLOBAL_CHANNELS = 6  # translation (0-2) and root rotation (3-5)

SYNTH_FAMILIES = ("sine_walk", "sine_sit")
SYNTH_FREQUENCY_HZ = {"sine_walk": (1.5, 2.5), "sine_sit": (0.2, 0.6)}
SYNTH_AMPLITUDE = (0.2, 1.0)
SYNTH_OFFSET = (-0.5, 0.5)
SYNTH_FPS = 25.0

_PATH_PATTERN = re.compile(r"S(?P<subject>\d+)$")
_FILE_PATTERN = re.compile(r"(?P<action>.+)_(?P<subaction>\d+)\.txt$")

FrameArray = np.ndarray


# -------------------------------------------------------------------
# TYPES
# -------------------------------------------------------------------
@dataclass
class MotionSequence:
    """
    Frames x channels of joint angles (radians) sampled at `fps`.

    `action` holds the action name; its label id comes from a LabelVocab.
    """

    frames: np.ndarray
    fps: float
    action: Optional[str] = None
    subject: Optional[int] = None
    subaction: Optional[int] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ShapeError(f"frames must be 2-D (frames x channels), got shape {self.frames.shape}")
        if self.fps <= 0:
            raise ArgumentError(f"fps must be positive, got {self.fps}")
        if not np.all(np.isfinite(self.frames)):
            raise DataError("motion sequence contains non-finite values")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def channels(self) -> int:
        return self.frames.shape[1]

    @property
    def file_id(self) -> str:
        """Stable identifier `S<subject>/<action>_<subaction>` used by clip lists."""
        return f"S{self.subject}/{self.action}_{self.subaction}"


@dataclass(frozen=True)
class NormStats:
    """
    Reversible preprocessing contract.

    `min`/`max` are the extrema after mean subtraction, used by unit_range.
    Dropped channels are restored from `mean` on the inverse transform.
    """

    mean: np.ndarray
    std: np.ndarray
    min: np.ndarray
    max: np.ndarray
    keep_mask: np.ndarray
    scheme: str = "zscore"
    ignore_threshold: float = 1e-4

    @property
    def channels(self) -> int:
        return int(self.mean.shape[0])

    @property
    def kept_count(self) -> int:
        return int(self.keep_mask.sum())

    @property
    def kept_indices(self) -> np.ndarray:
        return np.flatnonzero(self.keep_mask)


@dataclass(frozen=True)
class LabelVocab:
    """Ordered action names; index i is the one-hot position of names[i]."""

    names: Tuple[str, ...]

    MASKED = -1

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ArgumentError("label vocabulary contains duplicate names")

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ArgumentError(f"Unknown action '{name}'")

    def name(self, label_id: int) -> str:
        return self.names[label_id]

    def one_hot(self, label_id: int) -> np.ndarray:
        vec = np.zeros(self.size)
        if label_id == self.MASKED:
            return vec
        if not 0 <= label_id < self.size:
            raise ArgumentError(f"label id {label_id} outside vocabulary of size {self.size}")
        vec[label_id] = 1.0
        return vec


@dataclass
class SampleWindow:
    """A length-T window `full` split at jτ into prefix X and suffix Y."""

    X: np.ndarray
    Y: np.ndarray
    full: np.ndarray
    j: int
    start: int = 0


# -------------------------------------------------------------------
# INGESTION
# -------------------------------------------------------------------
def parse_path(path: Union[str, Path]) -> Tuple[Optional[str], Optional[int], Optional[int]]:
    """Return (action, subject, subaction) from `.../S<k>/<action>_<idx>.txt`, None where absent."""
    path = Path(path)
    action = subaction = subject = None
    file_match = _FILE_PATTERN.match(path.name)
    if file_match:
        action = file_match.group("action")
        subaction = int(file_match.group("subaction"))
    dir_match = _PATH_PATTERN.match(path.parent.name)
    if dir_match:
        subject = int(dir_match.group("subject"))
    return action, subject, subaction


def load_expmap_file(path: Union[str, Path], fps: float = H36M_FPS) -> MotionSequence:
    """
    Read one exponential-map file.

    Raises:
        FormatError: On an empty file, a ragged row or a non-numeric token;
            the message carries the 1-based line number
    """
    rows: List[List[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as file:
        for line_no, line in enumerate(file, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split(",")
            try:
                values = [float(tok) for tok in tokens]
            except ValueError:
                raise FormatError(f"{path}:{line_no}: non-numeric token")
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise FormatError(f"{path}:{line_no}: expected {width} channels, found {len(values)}")
            rows.append(values)

    if not rows:
        raise FormatError(f"{path}: file contains no frames")

    frames = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(frames)):
        raise FormatError(f"{path}: non-finite value")
    action, subject, subaction = parse_path(path)
    return MotionSequence(frames, fps, action=action, subject=subject, subaction=subaction)


def list_dataset_files(root: Union[str, Path], subjects: Iterable[int],
                       actions: Optional[Sequence[str]] = None) -> List[Path]:
    """Sorted `S<k>/<action>_<idx>.txt` paths under root for the requested subjects/actions."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory '{root}' does not exist")
    wanted = set(actions) if actions else None
    paths = []
    for subject in subjects:
        for path in sorted((root / f"S{subject}").glob("*.txt")):
            action, _, _ = parse_path(path)
            if action is not None and (wanted is None or action in wanted):
                paths.append(path)
    return paths


def load_dataset(root: Union[str, Path], subjects: Iterable[int], actions: Optional[Sequence[str]] = None,
                 fps: float = H36M_FPS, workers: int = 4) -> List[MotionSequence]:
    """
    Load every matching file of a dataset directory.

    Files are parsed on a thread pool and merged in sorted path order, so the
    result does not depend on `workers`.
    """
    paths = list_dataset_files(root, subjects, actions)
    if not paths:
        raise DataError(f"no motion files for subjects {list(subjects)} under '{root}'")
    logger.info(f"Loading {len(paths)} motion files", extra={"root": str(root), "workers": workers})
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        sequences = list(pool.map(lambda p: load_expmap_file(p, fps), paths))
    return sequences


# -------------------------------------------------------------------
# PREPROCESSING
# -------------------------------------------------------------------
def downsample(seq: MotionSequence, factor: int) -> MotionSequence:
    """Keep frames 0, factor, 2*factor, ...; fps is divided by factor."""
    if factor < 1:
        raise ArgumentError(f"downsample factor must be >= 1, got {factor}")
    return replace(seq, frames=seq.frames[::factor].copy(), fps=seq.fps / factor)


def compute_norm_stats(train: Sequence[MotionSequence], scheme: str = "zscore",
                       ignore_threshold: float = 1e-4) -> NormStats:
    """
    Per-channel statistics over all training frames (population std).

    Raises:
        ArgumentError: On an empty training set or an unknown scheme
        ShapeError: If sequences disagree on the channel count
    """
    if not train:
        raise ArgumentError("cannot compute normalization statistics of an empty set")
    if scheme not in ("zscore", "unit_range"):
        raise ArgumentError(f"Unknown normalization scheme '{scheme}'")
    channels = {seq.channels for seq in train}
    if len(channels) != 1:
        raise ShapeError(f"training sequences disagree on channel count: {sorted(channels)}")

    data = np.concatenate([seq.frames for seq in train], axis=0)
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    centered = data - mean
    keep = std >= ignore_threshold
    logger.info(f"Normalization statistics: {int(keep.sum())}/{keep.size} channels kept",
                extra={"scheme": scheme, "frames": data.shape[0]})
    return NormStats(mean, std, centered.min(axis=0), centered.max(axis=0), keep, scheme, ignore_threshold)


def normalize(seq: Union[MotionSequence, np.ndarray], stats: NormStats, direction: str = "forward"):
    """
    Forward: drop masked channels and scale the rest. Inverse: undo the scaling
    and restore dropped channels from the stored means.

    Accepts a MotionSequence or a frames array (any leading axes) and returns
    the same kind.

    Raises:
        ShapeError: On a channel count that does not match the stats
        StatsError: On a kept channel with zero std (zscore) or zero range (unit_range)
    """
    if isinstance(seq, MotionSequence):
        return replace(seq, frames=normalize(seq.frames, stats, direction))

    x = np.asarray(seq, dtype=np.float64)
    keep = stats.keep_mask
    mean, std = stats.mean[keep], stats.std[keep]
    lo, hi = stats.min[keep], stats.max[keep]

    if stats.scheme == "zscore":
        scale = std
    else:
        scale = hi - lo
    if np.any(scale <= 0):
        raise StatsError(f"kept channel with zero {'std' if stats.scheme == 'zscore' else 'range'}")

    if direction == "forward":
        if x.shape[-1] != stats.channels:
            raise ShapeError(f"expected {stats.channels} channels, got {x.shape[-1]}")
        kept = x[..., keep]
        if stats.scheme == "zscore":
            return (kept - mean) / std
        return 2.0 * (kept - mean - lo) / scale - 1.0

    if direction == "inverse":
        if x.shape[-1] != stats.kept_count:
            raise ShapeError(f"expected {stats.kept_count} normalized channels, got {x.shape[-1]}")
        if stats.scheme == "zscore":
            restored = x * std + mean
        else:
            restored = (x + 1.0) * scale / 2.0 + lo + mean
        out = np.broadcast_to(stats.mean, x.shape[:-1] + (stats.channels,)).copy()
        out[..., keep] = restored
        return out

    raise ArgumentError(f"Unknown normalization direction '{direction}'")


def append_label(frames: np.ndarray, label_id: int, vocab: LabelVocab) -> np.ndarray:
    """Concatenate the one-hot label (all zero for LabelVocab.MASKED) to every frame."""
    frames = np.asarray(frames, dtype=np.float64)
    block = np.broadcast_to(vocab.one_hot(label_id), frames.shape[:-1] + (vocab.size,))
    return np.concatenate([frames, block], axis=-1)


def window_sample(seq: Union[MotionSequence, np.ndarray], T: int, j: int, tau: int,
                  rng: np.random.Generator) -> SampleWindow:
    """
    Draw a uniformly random length-T window and split it after jτ frames.

    Exactly one value is drawn from rng per call.

    Raises:
        ArgumentError: If the sequence is shorter than T or (T, j, tau) is inconsistent
    """
    frames = seq.frames if isinstance(seq, MotionSequence) else np.asarray(seq, dtype=np.float64)
    if tau < 1 or T % tau != 0:
        raise ArgumentError(f"tau={tau} must divide T={T}")
    if not 1 <= j <= T // tau:
        raise ArgumentError(f"prefix index j={j} outside 1..{T // tau}")
    if frames.shape[0] < T:
        raise ArgumentError(f"sequence of {frames.shape[0]} frames is shorter than T={T}")

    start = int(rng.integers(0, frames.shape[0] - T + 1))
    full = frames[start:start + T].copy()
    split = j * tau
    return SampleWindow(X=full[:split], Y=full[split:], full=full, j=j, start=start)


# -------------------------------------------------------------------
# ROTATIONS
# -------------------------------------------------------------------
def _skew(r: np.ndarray) -> np.ndarray:
    out = np.zeros(r.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -r[..., 2], r[..., 1]
    out[..., 1, 0], out[..., 1, 2] = r[..., 2], -r[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -r[..., 1], r[..., 0]
    return out


def expmap_to_rotmat(r: np.ndarray) -> np.ndarray:
    """
    Rodrigues' formula for one 3-vector or a stack (..., 3) -> (..., 3, 3).

    Angles below 1e-12 map to the identity.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 3:
        raise ShapeError(f"exponential map needs 3 components, got {r.shape[-1]}")
    theta = np.linalg.norm(r, axis=-1)
    small = theta < 1e-12
    safe = np.where(small, 1.0, theta)
    k = _skew(r)
    a = np.where(small, 0.0, np.sin(safe) / safe)[..., None, None]
    b = np.where(small, 0.0, (1.0 - np.cos(safe)) / (safe * safe))[..., None, None]
    return np.eye(3) + a * k + b * (k @ k)


def _check_rotation(R: np.ndarray):
    if R.shape[-2:] != (3, 3):
        raise ShapeError(f"rotation matrix must be 3x3, got {R.shape[-2:]}")
    err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max() if R.size else 0.0
    if not np.isfinite(err) or err > 1e-6:
        raise ArgumentError(f"matrix is not orthonormal (max deviation {err:.3g})")


def rotmat_to_euler(R: np.ndarray, convention: str = "zyx") -> np.ndarray:
    """
    Euler angles of a rotation matrix (or a stack (..., 3, 3) -> (..., 3)).

    zyx: R = Rz(yaw) Ry(pitch) Rx(roll), returns (yaw, pitch, roll).
    xyz: R = Rx(a) Ry(b) Rz(c), returns (a, b, c); these are the negated
         angles of the widely used Human3.6M evaluation decomposition, so
         angle-difference norms agree with it.

    Gimbal lock (|sin(pitch)| >= 1 - 1e-9) fixes the last angle to 0.

    Raises:
        ArgumentError: If R is not orthonormal within 1e-6
    """
    R = np.asarray(R, dtype=np.float64)
    _check_rotation(R)
    if convention == "zyx":
        s = -R[..., 2, 0]
        locked = np.abs(s) >= 1.0 - 1e-9
        pitch = np.arcsin(np.clip(s, -1.0, 1.0))
        yaw = np.where(locked, np.arctan2(-R[..., 0, 1], R[..., 1, 1]), np.arctan2(R[..., 1, 0], R[..., 0, 0]))
        roll = np.where(locked, 0.0, np.arctan2(R[..., 2, 1], R[..., 2, 2]))
        pitch = np.where(locked, np.sign(s) * np.pi / 2, pitch)
        return np.stack([yaw, pitch, roll], axis=-1)
    if convention == "xyz":
        s = R[..., 0, 2]
        locked = np.abs(s) >= 1.0 - 1e-9
        b = np.where(locked, np.sign(s) * np.pi / 2, np.arcsin(np.clip(s, -1.0, 1.0)))
        a = np.where(locked, np.arctan2(R[..., 2, 1], R[..., 1, 1]), np.arctan2(-R[..., 1, 2], R[..., 2, 2]))
        c = np.where(locked, 0.0, np.arctan2(-R[..., 0, 1], R[..., 0, 0]))
        return np.stack([a, b, c], axis=-1)
    raise ArgumentError(f"Unknown Euler convention '{convention}'")


def _axis_rotation(axis: int, angle: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(np.shape(angle) + (3, 3))
    i, j = [(1, 2), (0, 2), (0, 1)][axis]
    out[..., axis, axis] = 1.0
    out[..., i, i], out[..., j, j] = c, c
    sign = -1.0 if axis == 1 else 1.0
    out[..., i, j], out[..., j, i] = -sign * s, sign * s
    return out


def euler_to_rotmat(angles: np.ndarray, convention: str = "zyx") -> np.ndarray:
    """Compose a rotation from Euler angles; inverse of rotmat_to_euler away from gimbal lock."""
    angles = np.asarray(angles, dtype=np.float64)
    first, second, third = angles[..., 0], angles[..., 1], angles[..., 2]
    if convention == "zyx":
        return _axis_rotation(2, first) @ _axis_rotation(1, second) @ _axis_rotation(0, third)
    if convention == "xyz":
        return _axis_rotation(0, first) @ _axis_rotation(1, second) @ _axis_rotation(2, third)
    raise ArgumentError(f"Unknown Euler convention '{convention}'")


def expmap_frames_to_euler(frames: np.ndarray, convention: str = "zyx") -> np.ndarray:
    """
    Convert (..., channels) exponential-map frames to Euler frames of the same
    width. Channels 0-2 (translation) are passed through; every following
    triple is converted as one joint.
    """
    frames = np.asarray(frames, dtype=np.float64)
    channels = frames.shape[-1]
    if channels < 3 or channels % 3 != 0:
        raise ShapeError(f"expected a multiple of 3 channels, got {channels}")
    out = frames.copy()
    joints = frames[..., 3:].reshape(frames.shape[:-1] + (-1, 3))
    out[..., 3:] = rotmat_to_euler(expmap_to_rotmat(joints), convention).reshape(frames.shape[:-1] + (-1,))
    return out


# -------------------------------------------------------------------
# SYNTHETIC MOTION
# -------------------------------------------------------------------
def synth_bounds() -> Tuple[float, float]:
    """Closed interval every synthetic value lies in."""
    return SYNTH_OFFSET[0] - SYNTH_AMPLITUDE[1], SYNTH_OFFSET[1] + SYNTH_AMPLITUDE[1]


def synth_motion(family: str, channels: int, length: int, seed: int, fps: float = SYNTH_FPS) -> MotionSequence:
    """
    Channel c = A_c sin(2π f_c t + φ_c) + b_c with family-specific frequency
    ranges (sine_walk 1.5-2.5 Hz, sine_sit 0.2-0.6 Hz), A in [0.2, 1],
    b in [-0.5, 0.5], φ uniform. Deterministic in all arguments.
    """
    if family not in SYNTH_FAMILIES:
        raise ArgumentError(f"Unknown synthetic family '{family}'")
    if channels < 1 or length < 1:
        raise ArgumentError("channels and length must be >= 1")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, SYNTH_FAMILIES.index(family)])
    amplitude = rng.uniform(*SYNTH_AMPLITUDE, size=channels)
    frequency = rng.uniform(*SYNTH_FREQUENCY_HZ[family], size=channels)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=channels)
    offset = rng.uniform(*SYNTH_OFFSET, size=channels)
    t = np.arange(length)[:, None] / fps
    frames = amplitude * np.sin(2.0 * np.pi * frequency * t + phase) + offset
    return MotionSequence(frames, fps, action=family)
