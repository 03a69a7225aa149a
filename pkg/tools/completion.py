"""
Latent Pattern Completion Module

Maps the code of a partial motion X to the code of its completion XY and
decodes the result. Two completers share one interface:

- CompletionVector (ADD): z + v_j, where v_j is the mean latent difference
  E(XY) - E(X) over training windows
- FnCompleter (FN): a single linear dense layer n -> n fitted with MAE

Both exist in a "completion" mode (target E(XY)) and a "matching" mode
(target E(Y), Y encoded as its own zero-padded prefix) for the ablation.
The same machinery classifies motion by completing unlabeled codes to
labeled ones and reading the decoded label channels.

Dependencies:
- numpy: Array math
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from tools.errors import ArgumentError, ShapeError
from tools.hs2sae import (
    ArchConfig,
    LatentCode,
    ModelParams,
    TrainConfig,
    decode,
    decode_batch,
    encode_batch,
    encode_prefix,
)
from tools.motiondata import LabelVocab, SampleWindow
from tools.ndmath import (
    Blocks,
    DenseParams,
    dense_backward,
    dense_forward,
    init_optimizer,
    learning_rate,
    mae_grad,
    mae_loss,
    nadam_step,
)
from tools.utils import make_rng

logger = logging.getLogger(__name__)

MODES = ("completion", "matching")
ENCODE_CHUNK = 256


# -------------------------------------------------------------------
# TYPES
# -------------------------------------------------------------------
@dataclass
class CompletionVector:
    """
    The ADD completer: v = mean of d_j, sigma = population std of d_j.

    `prefix_len` is the input code's prefix length (jτ); `target_len` is the
    prefix length of the completed code (T, or T - jτ in matching mode).
    """

    j: int
    v: np.ndarray
    sigma: np.ndarray
    sample_count: int
    prefix_len: int
    target_len: int
    mode: str = "completion"

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.sample_count < 1:
            raise ArgumentError("completion vector needs at least one sample")
        if np.any(self.sigma < 0) or self.v.shape != self.sigma.shape:
            raise ArgumentError("sigma must be non-negative and congruent to v")

    def apply(self, z: np.ndarray) -> np.ndarray:
        return z + self.v


@dataclass
class FnCompleter:
    """Linear n -> n layer trained for one prefix index; `sigma` feeds noisy generation."""

    layer: DenseParams
    trained_j: int
    prefix_len: int
    target_len: int
    mode: str = "completion"
    sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.layer.in_dim != self.layer.out_dim:
            raise ArgumentError("FN completer weight must be square")
        if self.layer.activation != "linear":
            raise ArgumentError("FN completer layer must be linear")

    def apply(self, z: np.ndarray) -> np.ndarray:
        return dense_forward(self.layer, z)


Completer = Union[CompletionVector, FnCompleter]


@dataclass
class PatternPairSet:
    """Codes of partial patterns P (N, n) and their targets C (N, n) for one prefix index."""

    P: np.ndarray
    C: np.ndarray
    j: int
    prefix_len: int
    target_len: int
    mode: str = "completion"

    def __post_init__(self):
        if self.P.ndim != 2 or self.P.shape != self.C.shape:
            raise ArgumentError(f"pair codes must share shape (N, n), got {self.P.shape} and {self.C.shape}")

    def __len__(self) -> int:
        return self.P.shape[0]

    @property
    def diffs(self) -> np.ndarray:
        return self.C - self.P


def _check_mode(mode: str):
    if mode not in MODES:
        raise ArgumentError(f"Unknown completion mode '{mode}'")


def _encode_chunked(params: ModelParams, cfg: ArchConfig, X: np.ndarray) -> np.ndarray:
    return np.concatenate([encode_batch(params, cfg, X[i:i + ENCODE_CHUNK])
                           for i in range(0, X.shape[0], ENCODE_CHUNK)], axis=0)


# -------------------------------------------------------------------
# LATENT DIFFERENCES AND PAIRS
# -------------------------------------------------------------------
def _target_frames(cfg: ArchConfig, fulls: np.ndarray, j: int, mode: str) -> np.ndarray:
    split = j * cfg.tau
    if mode == "completion":
        return fulls
    if split >= cfg.T:
        raise ArgumentError("matching mode needs a nonempty suffix (j < T/tau)")
    return fulls[:, split:]


def build_pair_set(params: ModelParams, cfg: ArchConfig, fulls: np.ndarray, j: int,
                   mode: str = "completion") -> PatternPairSet:
    """
    Encode (E(X), E(XY)) or (E(X), E(Y)) for windows fulls (N, T, d).

    Raises:
        ArgumentError: On an unknown mode, an empty set or j out of range
    """
    _check_mode(mode)
    fulls = np.asarray(fulls, dtype=np.float64)
    if fulls.ndim != 3 or fulls.shape[0] == 0:
        raise ArgumentError("pair set needs a nonempty (N, T, d) window batch")
    if fulls.shape[1] != cfg.T:
        raise ArgumentError(f"windows have {fulls.shape[1]} frames, model expects T={cfg.T}")
    if not 1 <= j <= cfg.blocks:
        raise ArgumentError(f"prefix index j={j} outside 1..{cfg.blocks}")
    targets = _target_frames(cfg, fulls, j, mode)
    P = _encode_chunked(params, cfg, fulls[:, :j * cfg.tau])
    C = _encode_chunked(params, cfg, targets)
    return PatternPairSet(P, C, j, j * cfg.tau, targets.shape[1], mode)


def latent_diff(params: ModelParams, cfg: ArchConfig, pair: SampleWindow, mode: str = "completion") -> np.ndarray:
    """d_j = E(XY) - E(X) (completion) or E(Y) - E(X) (matching)."""
    _check_mode(mode)
    if pair.X.shape[0] != pair.j * cfg.tau or pair.full.shape[0] != cfg.T:
        raise ArgumentError("window is inconsistent with the model's T and tau")
    pairs = build_pair_set(params, cfg, pair.full[None], pair.j, mode)
    return pairs.diffs[0]


def compute_vj(params: ModelParams, cfg: ArchConfig, pairs: Union[PatternPairSet, Sequence[SampleWindow]],
               j: int, mode: str = "completion") -> CompletionVector:
    """
    Mean and population std of the latent differences of all pairs.

    Raises:
        ArgumentError: On an empty set or pairs of another prefix index
    """
    _check_mode(mode)
    if not isinstance(pairs, PatternPairSet):
        windows = list(pairs)
        if not windows:
            raise ArgumentError("cannot compute a completion vector from zero pairs")
        if any(w.j != j for w in windows):
            raise ArgumentError(f"all pairs must have prefix index j={j}")
        pairs = build_pair_set(params, cfg, np.stack([w.full for w in windows]), j, mode)
    if len(pairs) == 0:
        raise ArgumentError("cannot compute a completion vector from zero pairs")
    if pairs.j != j or pairs.mode != mode:
        raise ArgumentError(f"pair set holds j={pairs.j}/{pairs.mode}, requested j={j}/{mode}")

    diffs = pairs.diffs
    cv = CompletionVector(j, diffs.mean(axis=0), diffs.std(axis=0), len(pairs),
                          pairs.prefix_len, pairs.target_len, mode)
    logger.info(f"Completion vector j={j} ({mode}) from {len(pairs)} pairs",
                extra={"mean_sigma": float(cv.sigma.mean()), "norm_v": float(np.linalg.norm(cv.v))})
    return cv


# -------------------------------------------------------------------
# ADD COMPLETION
# -------------------------------------------------------------------
def complete_add(z: LatentCode, cv: CompletionVector) -> LatentCode:
    """
    z + v_j as a code of prefix length cv.target_len.

    Raises:
        ArgumentError: If z was not encoded from a prefix of cv.prefix_len frames
    """
    if z.prefix_len != cv.prefix_len:
        raise ArgumentError(f"code of prefix {z.prefix_len} frames, completion vector expects {cv.prefix_len}")
    if len(z) != cv.v.shape[0]:
        raise ArgumentError(f"code has {len(z)} entries, completion vector has {cv.v.shape[0]}")
    return LatentCode(z.z + cv.v, cv.target_len)


def complete_add_repeat(z: LatentCode, cv: CompletionVector, times: int) -> LatentCode:
    """Add v_j `times` times, extending the completion recursively."""
    if times < 1:
        raise ArgumentError("times must be >= 1")
    out = complete_add(z, cv)
    for _ in range(times - 1):
        out = LatentCode(out.z + cv.v, cv.target_len)
    return out


# -------------------------------------------------------------------
# FN COMPLETION
# -------------------------------------------------------------------
def fn_loss_and_grad(layer: DenseParams, P: np.ndarray, C: np.ndarray):
    """MAE between layer(P) and C, with gradients keyed `weight` / `bias`."""
    pred = dense_forward(layer, P)
    loss = mae_loss(pred, C)
    _, grads = dense_backward(layer, P, pred, mae_grad(pred, C))
    return loss, grads


def fit_fn(pairs: PatternPairSet, tc: TrainConfig, init: Optional[DenseParams] = None) -> FnCompleter:
    """
    Fit the linear completer by minibatch Nadam on MAE.

    The layer starts at `init`, by default the ADD solution (identity
    weight, mean shift bias). The learning rate follows the step schedule,
    multiplied by tc.drop_rate every tc.drop_every epochs.

    Raises:
        ArgumentError: On an empty pair set or mismatched code dimensions
    """
    if len(pairs) == 0:
        raise ArgumentError("cannot fit a completer on zero pairs")
    P, C = pairs.P, pairs.C
    n = P.shape[1]
    layer = init if init is not None else DenseParams(np.eye(n), (C - P).mean(axis=0), "linear")
    if layer.weight.shape != (n, n):
        raise ArgumentError(f"initial layer is {layer.weight.shape}, codes have {n} entries")
    if tc.epochs == 0:
        return FnCompleter(layer, pairs.j, pairs.prefix_len, pairs.target_len, pairs.mode)

    steps_per_epoch = int(np.ceil(len(pairs) / tc.batch))
    blocks = layer.blocks("fn")
    state = init_optimizer(blocks, tc.lr0, tc.decay, schedule="step", drop_rate=tc.drop_rate,
                           drop_every=tc.drop_every * steps_per_epoch)
    rng = make_rng(tc.seed, "fn", "shuffle")

    for epoch in range(tc.epochs):
        lr = learning_rate(state)
        order = rng.permutation(len(pairs))
        losses = []
        for start in range(0, len(pairs), tc.batch):
            idx = order[start:start + tc.batch]
            current = DenseParams.from_blocks(blocks, "fn")
            loss, grads = fn_loss_and_grad(current, P[idx], C[idx])
            blocks, state = nadam_step(state, blocks, {f"fn.{k}": v for k, v in grads.items()})
            losses.append(loss)
        logger.info(f"FN epoch {epoch}: loss {np.mean(losses):.6f}",
                    extra={"epoch": epoch, "loss": float(np.mean(losses)), "learning_rate": lr})

    return FnCompleter(DenseParams.from_blocks(blocks, "fn"), pairs.j, pairs.prefix_len,
                       pairs.target_len, pairs.mode)


# -------------------------------------------------------------------
# PREDICTION AND GENERATION
# -------------------------------------------------------------------
def _check_prefix(completer: Completer, X: np.ndarray):
    if X.shape[-2] != completer.prefix_len:
        raise ArgumentError(f"prefix of {X.shape[-2]} frames, completer expects {completer.prefix_len}")


def predict_batch(params: ModelParams, cfg: ArchConfig, completer: Completer, X: np.ndarray) -> np.ndarray:
    """D(G(E(X))) for prefixes X (N, jτ, d) -> (N, T, d)."""
    X = np.asarray(X, dtype=np.float64)
    _check_prefix(completer, X)
    codes = completer.apply(_encode_chunked(params, cfg, X))
    return decode_batch(params, cfg, codes)


def predict_full(params: ModelParams, cfg: ArchConfig, completer: Completer, X: np.ndarray) -> np.ndarray:
    """D(G(E(X))) for one prefix; the full T-frame output is returned."""
    X = np.asarray(X, dtype=np.float64)
    _check_prefix(completer, X)
    z = encode_prefix(params, cfg, X)
    return decode(params, cfg, completer.apply(z.z))


def predicted_suffix(output: np.ndarray, j: int, cfg: ArchConfig, mode: str = "completion") -> np.ndarray:
    """
    Frames of a decoded output that predict the unseen motion: frames after
    jτ in completion mode, the first T - jτ frames in matching mode.
    """
    _check_mode(mode)
    split = j * cfg.tau
    if mode == "completion":
        return output[..., split:cfg.T, :]
    return output[..., :cfg.T - split, :]


def generate_noisy(params: ModelParams, cfg: ArchConfig, fn: Completer, X: np.ndarray, scale: float,
                   rng: np.random.Generator, cv: Optional[CompletionVector] = None) -> np.ndarray:
    """
    D(G(E(X)) + scale * sigma * eps) with eps standard normal per component.

    sigma comes from `cv` when given, else from the completer itself.

    Raises:
        ArgumentError: If no sigma is available or scale < 0
    """
    if scale < 0:
        raise ArgumentError("noise scale must be non-negative")
    sigma = cv.sigma if cv is not None else getattr(fn, "sigma", None)
    if sigma is None:
        raise ArgumentError("noisy generation needs the sigma of a completion vector")
    X = np.asarray(X, dtype=np.float64)
    _check_prefix(fn, X)
    code = fn.apply(encode_prefix(params, cfg, X).z)
    if sigma.shape != code.shape:
        raise ArgumentError(f"sigma has {sigma.shape[0]} entries, code has {code.shape[0]}")
    noise = rng.standard_normal(code.shape[0])
    return decode(params, cfg, code + scale * sigma * noise)


def interpolate(params: ModelParams, cfg: ArchConfig, zA: Union[LatentCode, np.ndarray],
                zB: Union[LatentCode, np.ndarray], k: int) -> np.ndarray:
    """
    Decode (1 - α) zA + α zB for α = 0, 1/k, ..., 1.

    Returns (k + 1, T, d); the endpoints equal decode(zA) and decode(zB).
    """
    a = zA.z if isinstance(zA, LatentCode) else np.asarray(zA, dtype=np.float64)
    b = zB.z if isinstance(zB, LatentCode) else np.asarray(zB, dtype=np.float64)
    if a.shape != b.shape:
        raise ArgumentError(f"codes differ in dimension: {a.shape} vs {b.shape}")
    if k < 1:
        raise ArgumentError("interpolation needs k >= 1 steps")
    outputs = []
    for step in range(k + 1):
        if step == 0:
            code = a
        elif step == k:
            code = b
        else:
            alpha = step / k
            code = (1.0 - alpha) * a + alpha * b
        # one code per call keeps endpoints bit-identical to decode()
        outputs.append(decode(params, cfg, code))
    return np.stack(outputs)


# -------------------------------------------------------------------
# CLASSIFICATION
# -------------------------------------------------------------------
def strip_labels(fulls: np.ndarray, label_dim: int) -> np.ndarray:
    """Copy of labeled frames with the label block zeroed."""
    if label_dim < 1 or fulls.shape[-1] <= label_dim:
        raise ArgumentError("frames carry no label channels")
    out = np.array(fulls, dtype=np.float64, copy=True)
    out[..., -label_dim:] = 0.0
    return out


def label_pair_set(params: ModelParams, cfg: ArchConfig, fulls: np.ndarray, label_dim: int) -> PatternPairSet:
    """(E(unlabeled XY), E(labeled XY)) pairs at j = T/τ."""
    fulls = np.asarray(fulls, dtype=np.float64)
    P = _encode_chunked(params, cfg, strip_labels(fulls, label_dim))
    C = _encode_chunked(params, cfg, fulls)
    return PatternPairSet(P, C, cfg.blocks, cfg.T, cfg.T, "completion")


def read_label_probs(decoded: np.ndarray, vocab: Union[LabelVocab, int]) -> np.ndarray:
    """
    Probability vector from decoded label channels: the frame average, clamped
    at 0 and normalized; uniform when nothing positive remains.

    Works on one decoded sequence (T, d) or a batch (N, T, d).
    """
    size = vocab.size if isinstance(vocab, LabelVocab) else int(vocab)
    decoded = np.asarray(decoded, dtype=np.float64)
    if size < 1 or decoded.shape[-1] <= size:
        raise ArgumentError("decoded frames carry no label channels")
    scores = np.clip(decoded[..., -size:].mean(axis=-2), 0.0, None)
    total = scores.sum(axis=-1, keepdims=True)
    uniform = np.full_like(scores, 1.0 / size)
    return np.where(total > 0, scores / np.where(total > 0, total, 1.0), uniform)


def classify_windows(params: ModelParams, cfg: ArchConfig, completer: Optional[Completer], fulls: np.ndarray,
                     label_dim: int) -> np.ndarray:
    """
    Label probabilities (N, label_dim) for labeled windows: labels are
    stripped, the unlabeled code is completed (or decoded as is when
    completer is None) and the label channels of the decoding are read.
    """
    fulls = np.asarray(fulls, dtype=np.float64)
    if fulls.ndim != 3:
        raise ShapeError(f"expected (N, T, d) windows, got shape {fulls.shape}")
    codes = _encode_chunked(params, cfg, strip_labels(fulls, label_dim))
    if completer is not None:
        codes = completer.apply(codes)
    return read_label_probs(decode_batch(params, cfg, codes), label_dim)
