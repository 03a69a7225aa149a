"""
Hierarchical Sequence-to-Sequences Autoencoder Module

Encoder emitting one latent code per prefix length jτ, residual decoder with
the Repeat unit, the multi-prefix MAE loss with exact gradients, and the
training loop with rotating validation folds.

Architecture:
    encoder: frames (T, d) padded from the prefix -> T/τ blocks of τ frames
             -> shared sub-encoder GRU (final state per block)
             -> higher GRU over the T/τ sub-encodings, state j = z_j
    decoder: z -> [linear bridge when latent_dim != dec_hidden]
             -> decoder GRU unrolled T/τ steps on zero inputs
             -> two dense layers per step = anchor poses, repeated τ times
             -> decoder states repeated τ times -> two GRUs -> dense = residuals
             output frame t = anchor_t + residual_t

Variants:
    hs2sae     zero-padded prefixes, code z_j, target = prefix then x_{jτ} held
    basic_pad  prefix padded with its last frame, code = final state, same target
    h_seq2seq  end-to-end prefix -> sequence baseline for one fixed j; target
               is the full window (X->XY) or only its suffix (X->Y)

Dependencies:
- numpy: All array math
- pandas: Training history tables
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from tools.errors import ArgumentError, DataError, ShapeError
from tools.motiondata import MotionSequence, window_sample
from tools.ndmath import (
    Blocks,
    DenseParams,
    GruParams,
    dense_backward,
    dense_forward,
    gru_sequence,
    gru_sequence_backward,
    init_optimizer,
    learning_rate,
    mae_grad,
    mae_loss,
    nadam_step,
)
from tools.utils import make_rng

logger = logging.getLogger(__name__)

VARIANTS = ("hs2sae", "basic_pad", "h_seq2seq")
SEQ2SEQ_TARGETS = ("full", "suffix")


# -------------------------------------------------------------------
# CONFIGURATION TYPES
# -------------------------------------------------------------------
@dataclass(frozen=True)
class ArchConfig:
    """
    Architecture hyperparameters.

    T frames per window, tau frames per block, latent_dim (n) code size,
    features (d) channels per frame. `activation` applies to the two pose
    readout layers (tanh suits data normalized to [-1, 1]).
    """

    T: int
    tau: int
    latent_dim: int
    features: int
    sub_hidden: int
    dec_hidden: int
    activation: str = "linear"
    variant: str = "hs2sae"
    seq2seq_j: int = 1
    seq2seq_target: str = "full"

    def __post_init__(self):
        if self.tau < 1 or self.T < 1 or self.T % self.tau != 0:
            raise ArgumentError(f"tau={self.tau} must divide T={self.T}")
        for name in ("latent_dim", "features", "sub_hidden", "dec_hidden"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")
        if self.activation not in ("tanh", "linear"):
            raise ArgumentError(f"Unknown activation '{self.activation}'")
        if self.variant not in VARIANTS:
            raise ArgumentError(f"Unknown variant '{self.variant}'")
        if self.seq2seq_target not in SEQ2SEQ_TARGETS:
            raise ArgumentError(f"Unknown seq2seq_target '{self.seq2seq_target}'")
        if self.variant == "h_seq2seq" and not 1 <= self.seq2seq_j < self.blocks:
            raise ArgumentError(f"seq2seq_j={self.seq2seq_j} must lie in 1..{self.blocks - 1}")

    @property
    def blocks(self) -> int:
        """Number of τ-blocks, T/τ."""
        return self.T // self.tau

    @classmethod
    def from_run(cls, run, features: int, variant: Optional[str] = None) -> "ArchConfig":
        return cls(
            T=run.T, tau=run.tau, latent_dim=run.latent_dim, features=features,
            sub_hidden=run.sub_hidden, dec_hidden=run.dec_hidden, activation=run.activation,
            variant=variant or run.variant, seq2seq_j=run.seq2seq_j, seq2seq_target=run.seq2seq_target,
        )

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and sampling settings; defaults are the published ones."""

    lr0: float = 8e-4
    decay: float = 4e-3
    batch: int = 64
    epochs: int = 300
    samples_per_epoch: int = 10000
    folds: int = 5
    seed: int = 0
    label_dim: int = 0
    label_masking: bool = False
    val_samples: int = 256
    schedule: str = "inverse_time"
    drop_rate: float = 0.5
    drop_every: int = 10

    def __post_init__(self):
        for name in ("batch", "samples_per_epoch", "folds", "val_samples"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")
        if self.lr0 <= 0 or self.decay < 0 or self.epochs < 0:
            raise ArgumentError("lr0 must be positive, decay and epochs non-negative")
        if self.label_masking and self.label_dim < 1:
            raise ArgumentError("label masking needs label channels (label_dim >= 1)")

    @property
    def steps_per_epoch(self) -> int:
        return max(1, self.samples_per_epoch // self.batch)

    @classmethod
    def from_run(cls, run, label_dim: int = 0, **overrides) -> "TrainConfig":
        values = dict(
            lr0=run.lr0, decay=run.decay, batch=run.batch, epochs=run.epochs,
            samples_per_epoch=run.samples_per_epoch, folds=run.folds, seed=run.seed,
            label_dim=label_dim, label_masking=run.label_masking and label_dim > 0,
        )
        values.update(overrides)
        return cls(**values)


@dataclass
class LatentCode:
    """Code z of the prefix [x_1 .. x_prefix_len]."""

    z: np.ndarray
    prefix_len: int

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.z)):
            raise ArgumentError("latent code contains non-finite values")

    def __len__(self) -> int:
        return self.z.shape[0]


# -------------------------------------------------------------------
# PARAMETERS
# -------------------------------------------------------------------
GRU_PARTS = ("sub_encoder", "encoder", "decoder", "residual_1", "residual_2")
DENSE_PARTS = ("bridge", "pose_hidden", "pose_out", "residual_out")


@dataclass
class ModelParams:
    """All trainable layers; `bridge` exists only when latent_dim != dec_hidden."""

    arch: ArchConfig
    sub_encoder: GruParams
    encoder: GruParams
    decoder: GruParams
    pose_hidden: DenseParams
    pose_out: DenseParams
    residual_1: GruParams
    residual_2: GruParams
    residual_out: DenseParams
    bridge: Optional[DenseParams] = None

    def blocks(self) -> Blocks:
        """Ordered name -> array view of every parameter."""
        out: Blocks = {}
        for part in ("sub_encoder", "encoder", "bridge", "decoder", "pose_hidden", "pose_out",
                     "residual_1", "residual_2", "residual_out"):
            layer = getattr(self, part)
            if layer is not None:
                out.update(layer.blocks(part))
        return out

    @classmethod
    def from_blocks(cls, cfg: ArchConfig, blocks: Blocks) -> "ModelParams":
        act = cfg.activation
        return cls(
            arch=cfg,
            sub_encoder=GruParams.from_blocks(blocks, "sub_encoder"),
            encoder=GruParams.from_blocks(blocks, "encoder"),
            decoder=GruParams.from_blocks(blocks, "decoder"),
            pose_hidden=DenseParams.from_blocks(blocks, "pose_hidden", act),
            pose_out=DenseParams.from_blocks(blocks, "pose_out", act),
            residual_1=GruParams.from_blocks(blocks, "residual_1"),
            residual_2=GruParams.from_blocks(blocks, "residual_2"),
            residual_out=DenseParams.from_blocks(blocks, "residual_out"),
            bridge=DenseParams.from_blocks(blocks, "bridge") if "bridge.weight" in blocks else None,
        )

    def count(self) -> int:
        return int(sum(v.size for v in self.blocks().values()))


def init_params(cfg: ArchConfig, rng: np.random.Generator) -> ModelParams:
    """Seeded initialization; layers are drawn in a fixed order."""
    d, n, hs, hd = cfg.features, cfg.latent_dim, cfg.sub_hidden, cfg.dec_hidden
    sub_encoder = GruParams.init(rng, d, hs)
    encoder = GruParams.init(rng, hs, n)
    bridge = DenseParams.init(rng, n, hd) if n != hd else None
    decoder = GruParams.init(rng, 1, hd)
    pose_hidden = DenseParams.init(rng, hd, hd, cfg.activation)
    pose_out = DenseParams.init(rng, hd, d, cfg.activation)
    residual_1 = GruParams.init(rng, hd, hd)
    residual_2 = GruParams.init(rng, hd, hd)
    residual_out = DenseParams.init(rng, hd, d)
    return ModelParams(cfg, sub_encoder, encoder, decoder, pose_hidden, pose_out,
                       residual_1, residual_2, residual_out, bridge)


def zero_params(cfg: ArchConfig) -> ModelParams:
    """All-zero parameters with the shapes of `cfg`."""
    template = init_params(cfg, np.random.default_rng(0))
    return ModelParams.from_blocks(cfg, {k: np.zeros_like(v) for k, v in template.blocks().items()})


# -------------------------------------------------------------------
# SEQUENCE HELPERS
# -------------------------------------------------------------------
def repeat_unit(seq: np.ndarray, tau: int, expected_len: Optional[int] = None, axis: int = 0) -> np.ndarray:
    """
    Repeat every element of `seq` along `axis` τ times consecutively:
    element k fills output slots [kτ, (k+1)τ).

    Raises:
        ArgumentError: If tau < 1 or the input length differs from expected_len
    """
    seq = np.asarray(seq)
    if tau < 1:
        raise ArgumentError(f"tau must be >= 1, got {tau}")
    if expected_len is not None and seq.shape[axis] != expected_len:
        raise ArgumentError(f"repeat unit expects length {expected_len}, got {seq.shape[axis]}")
    return np.repeat(seq, tau, axis=axis)


def pad_prefix(X: np.ndarray, T: int, placeholder: str = "zero") -> np.ndarray:
    """Extend (..., L, d) prefixes to length T with zero frames or the last frame."""
    X = np.asarray(X, dtype=np.float64)
    missing = T - X.shape[-2]
    if missing < 0:
        raise ArgumentError(f"prefix of {X.shape[-2]} frames exceeds T={T}")
    if missing == 0:
        return X.copy()
    if placeholder == "zero":
        tail = np.zeros(X.shape[:-2] + (missing, X.shape[-1]))
    elif placeholder == "last":
        tail = np.repeat(X[..., -1:, :], missing, axis=-2)
    else:
        raise ArgumentError(f"Unknown placeholder '{placeholder}'")
    return np.concatenate([X, tail], axis=-2)


def build_targets(full: np.ndarray, tau: int) -> np.ndarray:
    """
    Reconstruction targets of every prefix of `full` (..., T, d).

    Returns (..., T/τ, T, d); entry j-1 keeps the first jτ frames and holds
    frame x_{jτ} for the rest of the window.
    """
    full = np.asarray(full, dtype=np.float64)
    T = full.shape[-2]
    if tau < 1 or T % tau != 0:
        raise ArgumentError(f"tau={tau} must divide T={T}")
    targets = []
    for j in range(1, T // tau + 1):
        split = j * tau
        target = full.copy()
        target[..., split:, :] = full[..., split - 1:split, :]
        targets.append(target)
    return np.stack(targets, axis=-3)


def _check_frames(cfg: ArchConfig, frames: np.ndarray, name: str):
    if frames.shape[-1] != cfg.features:
        raise ShapeError(f"{name} has {frames.shape[-1]} channels, model expects {cfg.features}")


# -------------------------------------------------------------------
# ENCODER / DECODER FORWARD + BACKWARD
# -------------------------------------------------------------------
def _encoder_forward(params: ModelParams, cfg: ArchConfig, padded: np.ndarray):
    n_seq = padded.shape[0]
    K = cfg.blocks
    chunks = padded.reshape(n_seq * K, cfg.tau, cfg.features)
    sub_states, sub_cache = gru_sequence(params.sub_encoder, chunks, np.zeros((n_seq * K, cfg.sub_hidden)))
    sub_codes = sub_states[:, -1].reshape(n_seq, K, cfg.sub_hidden)
    states, enc_cache = gru_sequence(params.encoder, sub_codes, np.zeros((n_seq, cfg.latent_dim)))
    return states, (sub_cache, enc_cache)


def _encoder_backward(params: ModelParams, cfg: ArchConfig, cache, d_states: np.ndarray, grads: Blocks):
    sub_cache, enc_cache = cache
    n_seq, K, _ = d_states.shape
    d_codes, _, g_enc = gru_sequence_backward(params.encoder, enc_cache, d_states)
    d_sub_states = np.zeros((n_seq * K, cfg.tau, cfg.sub_hidden))
    d_sub_states[:, -1] = d_codes.reshape(n_seq * K, cfg.sub_hidden)
    _, _, g_sub = gru_sequence_backward(params.sub_encoder, sub_cache, d_sub_states)
    _accumulate(grads, "encoder", g_enc)
    _accumulate(grads, "sub_encoder", g_sub)


def _decoder_forward(params: ModelParams, cfg: ArchConfig, Z: np.ndarray):
    n_seq = Z.shape[0]
    K, tau = cfg.blocks, cfg.tau
    h0 = dense_forward(params.bridge, Z) if params.bridge is not None else Z
    dec_states, dec_cache = gru_sequence(params.decoder, np.zeros((n_seq, K, 1)), h0)
    pose_h = dense_forward(params.pose_hidden, dec_states)
    anchors = dense_forward(params.pose_out, pose_h)
    repeated = repeat_unit(dec_states, tau, axis=1)
    zeros = np.zeros((n_seq, cfg.dec_hidden))
    res_1, res_1_cache = gru_sequence(params.residual_1, repeated, zeros)
    res_2, res_2_cache = gru_sequence(params.residual_2, res_1, zeros)
    residual = dense_forward(params.residual_out, res_2)
    out = repeat_unit(anchors, tau, axis=1) + residual
    cache = (Z, h0, dec_states, dec_cache, pose_h, anchors, res_1_cache, res_2, res_2_cache, residual)
    return out, cache


def _decoder_backward(params: ModelParams, cfg: ArchConfig, cache, d_out: np.ndarray, grads: Blocks) -> np.ndarray:
    Z, h0, dec_states, dec_cache, pose_h, anchors, res_1_cache, res_2, res_2_cache, residual = cache
    n_seq, K, tau = Z.shape[0], cfg.blocks, cfg.tau

    # residual pathway
    d_res_2, g = dense_backward(params.residual_out, res_2, residual, d_out)
    _accumulate(grads, "residual_out", g)
    d_res_1, _, g = gru_sequence_backward(params.residual_2, res_2_cache, d_res_2)
    _accumulate(grads, "residual_2", g)
    d_repeated, _, g = gru_sequence_backward(params.residual_1, res_1_cache, d_res_1)
    _accumulate(grads, "residual_1", g)
    d_dec_states = d_repeated.reshape(n_seq, K, tau, cfg.dec_hidden).sum(axis=2)

    # anchor pathway
    d_anchors = d_out.reshape(n_seq, K, tau, cfg.features).sum(axis=2)
    d_pose_h, g = dense_backward(params.pose_out, pose_h, anchors, d_anchors)
    _accumulate(grads, "pose_out", g)
    d_states, g = dense_backward(params.pose_hidden, dec_states, pose_h, d_pose_h)
    _accumulate(grads, "pose_hidden", g)
    d_dec_states = d_dec_states + d_states

    _, d_h0, g = gru_sequence_backward(params.decoder, dec_cache, d_dec_states)
    _accumulate(grads, "decoder", g)
    if params.bridge is None:
        return d_h0
    d_z, g = dense_backward(params.bridge, Z, h0, d_h0)
    _accumulate(grads, "bridge", g)
    return d_z


def _accumulate(grads: Blocks, prefix: str, layer_grads: Blocks):
    for name, value in layer_grads.items():
        key = f"{prefix}.{name}"
        grads[key] = grads[key] + value if key in grads else value


# -------------------------------------------------------------------
# PUBLIC ENCODE / DECODE
# -------------------------------------------------------------------
def _placeholder(cfg: ArchConfig) -> str:
    return "last" if cfg.variant == "basic_pad" else "zero"


def _code_index(cfg: ArchConfig, j: int) -> int:
    return cfg.blocks - 1 if cfg.variant == "basic_pad" else j - 1


def _prefix_index(cfg: ArchConfig, length: int) -> int:
    if length < cfg.tau or length > cfg.T or length % cfg.tau != 0:
        raise ArgumentError(f"prefix length {length} must be a multiple of tau={cfg.tau} in [{cfg.tau}, {cfg.T}]")
    return length // cfg.tau


def encode_batch(params: ModelParams, cfg: ArchConfig, X: np.ndarray) -> np.ndarray:
    """
    Codes of a batch of equal-length prefixes X (N, jτ, d) -> (N, latent_dim).

    Raises:
        ArgumentError: If jτ is not a multiple of tau in [tau, T]
        ShapeError: On a channel mismatch
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ShapeError(f"expected (N, frames, channels), got shape {X.shape}")
    _check_frames(cfg, X, "prefix")
    j = _prefix_index(cfg, X.shape[1])
    states, _ = _encoder_forward(params, cfg, pad_prefix(X, cfg.T, _placeholder(cfg)))
    return states[:, _code_index(cfg, j)]


def encode_prefix(params: ModelParams, cfg: ArchConfig, X: np.ndarray) -> LatentCode:
    """E(X) for a single prefix of jτ frames."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected (frames, channels), got shape {X.shape}")
    z = encode_batch(params, cfg, X[None])[0]
    return LatentCode(z, X.shape[0])


def decode_batch(params: ModelParams, cfg: ArchConfig, Z: np.ndarray) -> np.ndarray:
    """D(Z) for codes (N, latent_dim) -> frames (N, T, d)."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != cfg.latent_dim:
        raise ArgumentError(f"codes must have shape (N, {cfg.latent_dim}), got {Z.shape}")
    out, _ = _decoder_forward(params, cfg, Z)
    return out


def decode(params: ModelParams, cfg: ArchConfig, z: Union[LatentCode, np.ndarray]) -> np.ndarray:
    """Decode one code into T frames."""
    vec = z.z if isinstance(z, LatentCode) else np.asarray(z, dtype=np.float64).reshape(-1)
    if vec.shape[0] != cfg.latent_dim:
        raise ArgumentError(f"latent code has {vec.shape[0]} entries, model expects {cfg.latent_dim}")
    return decode_batch(params, cfg, vec[None])[0]


# -------------------------------------------------------------------
# LOSS
# -------------------------------------------------------------------
def training_views(cfg: ArchConfig, targets: np.ndarray, inputs: Optional[np.ndarray] = None):
    """
    Expand a batch of windows (B, T, d) into the encoder inputs, code indices,
    decoder targets and loss mask the variant trains on.

    `inputs` defaults to `targets`; it differs when classification masking
    zeroed parts of the input while targets stay the originals.
    """
    targets = np.asarray(targets, dtype=np.float64)
    inputs = targets if inputs is None else np.asarray(inputs, dtype=np.float64)
    if targets.shape != inputs.shape:
        raise ShapeError(f"inputs {inputs.shape} and targets {targets.shape} differ")
    if targets.shape[1] != cfg.T:
        raise ArgumentError(f"window of {targets.shape[1]} frames, model expects T={cfg.T}")
    _check_frames(cfg, targets, "window")
    B, K, tau, T = targets.shape[0], cfg.blocks, cfg.tau, cfg.T

    if cfg.variant == "h_seq2seq":
        split = cfg.seq2seq_j * tau
        enc_inputs = pad_prefix(inputs[:, :split], T, "zero")
        code_idx = np.full(B, cfg.seq2seq_j - 1)
        mask = None
        if cfg.seq2seq_target == "suffix":
            mask = np.zeros_like(targets)
            mask[:, split:] = 1.0
        return enc_inputs, code_idx, targets, mask

    placeholder = _placeholder(cfg)
    enc_inputs = np.stack([pad_prefix(inputs[:, :j * tau], T, placeholder) for j in range(1, K + 1)], axis=1)
    code_idx = np.tile([_code_index(cfg, j) for j in range(1, K + 1)], B)
    dec_targets = build_targets(targets, tau)
    return enc_inputs.reshape(B * K, T, cfg.features), code_idx, dec_targets.reshape(B * K, T, cfg.features), None


def _as_batch(full: np.ndarray) -> np.ndarray:
    full = np.asarray(full, dtype=np.float64)
    return full[None] if full.ndim == 2 else full


def multi_loss(params: ModelParams, cfg: ArchConfig, full: np.ndarray, inputs: Optional[np.ndarray] = None) -> float:
    """
    Mean over prefixes j = 1..T/τ (and over the batch) of the MAE between the
    prefix target and decode(encode(prefix)). For the h_seq2seq variant this is
    the single-prefix end-to-end loss.
    """
    enc_inputs, code_idx, dec_targets, mask = training_views(cfg, _as_batch(full), _as_batch(inputs) if inputs is not None else None)
    states, _ = _encoder_forward(params, cfg, enc_inputs)
    Z = states[np.arange(states.shape[0]), code_idx]
    out, _ = _decoder_forward(params, cfg, Z)
    return mae_loss(out, dec_targets, mask)


def multi_loss_and_grad(params: ModelParams, cfg: ArchConfig, full: np.ndarray,
                        inputs: Optional[np.ndarray] = None) -> Tuple[float, Blocks]:
    """multi_loss plus its gradient, keyed like params.blocks()."""
    enc_inputs, code_idx, dec_targets, mask = training_views(cfg, _as_batch(full), _as_batch(inputs) if inputs is not None else None)
    states, enc_cache = _encoder_forward(params, cfg, enc_inputs)
    rows = np.arange(states.shape[0])
    Z = states[rows, code_idx]
    out, dec_cache = _decoder_forward(params, cfg, Z)
    loss = mae_loss(out, dec_targets, mask)

    grads: Blocks = {}
    d_z = _decoder_backward(params, cfg, dec_cache, mae_grad(out, dec_targets, mask), grads)
    d_states = np.zeros_like(states)
    np.add.at(d_states, (rows, code_idx), d_z)
    _encoder_backward(params, cfg, enc_cache, d_states, grads)

    blocks = params.blocks()
    return loss, {name: grads.get(name, np.zeros_like(value)) for name, value in blocks.items()}


# -------------------------------------------------------------------
# CLASSIFICATION MASKING
# -------------------------------------------------------------------
def mask_for_classification(batch: np.ndarray, rng: np.random.Generator, label_dim: int) -> np.ndarray:
    """
    Split the batch at random into thirds: label channels zeroed, pose
    channels zeroed, untouched. Returns the masked copy; callers keep the
    original batch as the reconstruction target.

    Raises:
        ArgumentError: If the frames carry no label channels
    """
    batch = np.asarray(batch, dtype=np.float64)
    if label_dim < 1 or batch.shape[-1] <= label_dim:
        raise ArgumentError("batch frames carry no label channels")
    groups = np.array_split(rng.permutation(batch.shape[0]), 3)
    masked = batch.copy()
    masked[groups[0], ..., -label_dim:] = 0.0
    masked[groups[1], ..., :-label_dim] = 0.0
    return masked


# -------------------------------------------------------------------
# TRAINING
# -------------------------------------------------------------------
@dataclass
class TrainHistory:
    step_loss: List[float] = field(default_factory=list)
    epoch_train: List[float] = field(default_factory=list)
    epoch_val: List[float] = field(default_factory=list)
    rolling_val: List[float] = field(default_factory=list)
    learning_rate: List[float] = field(default_factory=list)
    best_epoch: int = -1

    def epochs_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "epoch": np.arange(len(self.epoch_train)),
            "train_loss": self.epoch_train,
            "val_loss": self.epoch_val,
            "rolling_val_loss": self.rolling_val,
            "learning_rate": self.learning_rate,
        })

    def steps_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"step": np.arange(len(self.step_loss)), "loss": self.step_loss})


def assign_folds(count: int, folds: int, rng: np.random.Generator) -> Optional[np.ndarray]:
    """Fold id per sequence (shuffled, round-robin); None when there are fewer sequences than folds."""
    if folds < 2 or count < folds:
        return None
    assignment = np.empty(count, dtype=int)
    assignment[rng.permutation(count)] = np.arange(count) % folds
    return assignment


def draw_windows(data: Sequence[np.ndarray], pool: Sequence[int], count: int, cfg: ArchConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """`count` full windows (count, T, d): a uniform sequence from pool, then a uniform start."""
    picks = rng.integers(0, len(pool), size=count)
    return np.stack([window_sample(data[pool[p]], cfg.T, cfg.blocks, cfg.tau, rng).full for p in picks])


def train_autoencoder(data: Sequence[Union[MotionSequence, np.ndarray]], cfg: ArchConfig,
                      tc: TrainConfig) -> Tuple[ModelParams, TrainHistory]:
    """
    Train the model with Nadam on mean minibatch losses.

    Epoch e validates on fold e % folds and trains on the others; the
    returned params are those with the best rolling validation loss (mean
    of the last `folds` epoch validation losses).

    Raises:
        DataError: If no sequence has at least T frames
    """
    frames = [s.frames if isinstance(s, MotionSequence) else np.asarray(s, dtype=np.float64) for s in data]
    usable = [f for f in frames if f.shape[0] >= cfg.T]
    if not usable:
        raise DataError(f"no training sequence has at least T={cfg.T} frames")
    for f in usable:
        _check_frames(cfg, f, "training sequence")

    params = init_params(cfg, make_rng(tc.seed, "train", "init"))
    history = TrainHistory()
    if tc.epochs == 0:
        return params, history

    fold_of = assign_folds(len(usable), tc.folds, make_rng(tc.seed, "train", "folds"))
    if fold_of is None:
        logger.warning(f"{len(usable)} sequences for {tc.folds} folds: validating on the training pool")
    window_rng = make_rng(tc.seed, "train", "windows")
    val_rng = make_rng(tc.seed, "train", "validation")
    mask_rng = make_rng(tc.seed, "train", "masking")

    blocks = params.blocks()
    state = init_optimizer(blocks, tc.lr0, tc.decay)
    best_loss, best_blocks = np.inf, blocks
    everything = list(range(len(usable)))

    for epoch in range(tc.epochs):
        if fold_of is None:
            train_pool = val_pool = everything
        else:
            val_fold = epoch % tc.folds
            train_pool = [i for i in everything if fold_of[i] != val_fold]
            val_pool = [i for i in everything if fold_of[i] == val_fold]

        lr = learning_rate(state)
        losses = []
        for _ in range(tc.steps_per_epoch):
            batch = draw_windows(usable, train_pool, tc.batch, cfg, window_rng)
            inputs = mask_for_classification(batch, mask_rng, tc.label_dim) if tc.label_masking else None
            loss, grads = multi_loss_and_grad(ModelParams.from_blocks(cfg, blocks), cfg, batch, inputs)
            blocks, state = nadam_step(state, blocks, grads)
            losses.append(loss)
        history.step_loss.extend(losses)

        val_batch = draw_windows(usable, val_pool, tc.val_samples, cfg, val_rng)
        val_loss = multi_loss(ModelParams.from_blocks(cfg, blocks), cfg, val_batch)
        history.epoch_train.append(float(np.mean(losses)))
        history.epoch_val.append(val_loss)
        history.rolling_val.append(float(np.mean(history.epoch_val[-tc.folds:])))
        history.learning_rate.append(lr)

        if history.rolling_val[-1] < best_loss:
            best_loss, best_blocks = history.rolling_val[-1], blocks
            history.best_epoch = epoch

        logger.info(f"Epoch {epoch}: train {history.epoch_train[-1]:.5f} val {val_loss:.5f}",
                    extra={"epoch": epoch, "train_loss": history.epoch_train[-1], "val_loss": val_loss,
                           "rolling_val_loss": history.rolling_val[-1], "learning_rate": lr})

    return ModelParams.from_blocks(cfg, best_blocks), history
