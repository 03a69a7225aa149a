"""
Dense and Recurrent Network Math Module

Minimal numpy implementation of the layers the autoencoder is built from,
with hand-derived gradients, the MAE loss, the Nadam optimizer and a
finite-difference gradient oracle.

Features:
- DenseParams / GruParams containers with seeded initialization
- Batched forward passes (dense_forward, gru_step, gru_sequence)
- Backpropagation through time for GRU sequences
- MAE loss with (masked) subgradient
- Nadam with inverse-time or step learning-rate schedules
- Central finite differences for gradient verification

Conventions:
- A Matrix is a 2-D float64 numpy array (rows x cols, row-major).
- Parameters travel between modules as "blocks": an ordered mapping
  name -> float64 array. Optimizer state, gradients and checkpoints all use
  the same block names.
- GRU variant: the reset gate multiplies the previous state before the
  recurrent matmul, h~ = tanh(W_h x + U_h (r * h) + b_h), and
  h' = (1 - z) * h + z * h~.

Dependencies:
- numpy: All array math
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from tools.errors import ArgumentError, NonFiniteGradientError, ShapeError

logger = logging.getLogger(__name__)

Blocks = Dict[str, np.ndarray]

ACTIVATIONS = ("tanh", "linear")
GRU_FIELDS = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form does not overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _activate(a: np.ndarray, activation: str) -> np.ndarray:
    return np.tanh(a) if activation == "tanh" else a


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and convert to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ArgumentError(f"{name} contains non-finite values")
    return m


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def recurrent_uniform(rng: np.random.Generator, hidden: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(hidden)
    return rng.uniform(-limit, limit, size=(hidden, hidden))


# -------------------------------------------------------------------
# DENSE LAYER
# -------------------------------------------------------------------
@dataclass
class DenseParams:
    """Affine layer act(W x + b) with weight (out x in) and bias (out)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "linear"

    def __post_init__(self):
        self.weight = as_matrix(self.weight, "dense weight")
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise ArgumentError(f"Unknown activation '{self.activation}'")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, out_dim: int, activation: str = "linear") -> "DenseParams":
        return cls(glorot_uniform(rng, out_dim, in_dim), np.zeros(out_dim), activation)

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int, activation: str = "linear") -> "DenseParams":
        return cls(np.zeros((out_dim, in_dim)), np.zeros(out_dim), activation)

    def blocks(self, prefix: str) -> Blocks:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}

    @classmethod
    def from_blocks(cls, blocks: Blocks, prefix: str, activation: str = "linear") -> "DenseParams":
        return cls(blocks[f"{prefix}.weight"], blocks[f"{prefix}.bias"], activation)


def dense_forward(p: DenseParams, x: np.ndarray) -> np.ndarray:
    """
    Apply act(W x + b) over the last axis of x.

    Raises:
        ShapeError: If x's last axis differs from the weight columns
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.in_dim:
        raise ShapeError(f"dense input has {x.shape[-1]} features, layer expects {p.in_dim}")
    return _activate(x @ p.weight.T + p.bias, p.activation)


def dense_backward(p: DenseParams, x: np.ndarray, y: np.ndarray, dy: np.ndarray) -> Tuple[np.ndarray, Blocks]:
    """Gradients of a dense layer given its input x, output y and dL/dy."""
    da = dy * (1.0 - y * y) if p.activation == "tanh" else dy
    flat_da = da.reshape(-1, p.out_dim)
    grads = {
        "weight": flat_da.T @ x.reshape(-1, p.in_dim),
        "bias": flat_da.sum(axis=0),
    }
    return da @ p.weight, grads


# -------------------------------------------------------------------
# GRU
# -------------------------------------------------------------------
@dataclass
class GruParams:
    """Gate weights W_* (hidden x input), recurrent U_* (hidden x hidden), biases b_* (hidden)."""

    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        for name in GRU_FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        hidden, inputs = self.W_z.shape
        expected = {"W": (hidden, inputs), "U": (hidden, hidden), "b": (hidden,)}
        for name in GRU_FIELDS:
            value = getattr(self, name)
            if value.shape != expected[name[0]]:
                raise ShapeError(f"GRU {name} has shape {value.shape}, expected {expected[name[0]]}")
            if not np.all(np.isfinite(value)):
                raise ArgumentError(f"GRU {name} contains non-finite values")

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[0]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruParams":
        w = lambda: np.zeros((hidden_dim, input_dim))
        u = lambda: np.zeros((hidden_dim, hidden_dim))
        b = lambda: np.zeros(hidden_dim)
        return cls(w(), w(), w(), u(), u(), u(), b(), b(), b())

    @classmethod
    def init(cls, rng: np.random.Generator, input_dim: int, hidden_dim: int) -> "GruParams":
        """Glorot-uniform input weights, uniform(+-1/sqrt(H)) recurrent weights, zero biases."""
        w = [glorot_uniform(rng, hidden_dim, input_dim) for _ in range(3)]
        u = [recurrent_uniform(rng, hidden_dim) for _ in range(3)]
        b = [np.zeros(hidden_dim) for _ in range(3)]
        return cls(*w, *u, *b)

    def blocks(self, prefix: str) -> Blocks:
        return {f"{prefix}.{name}": getattr(self, name) for name in GRU_FIELDS}

    @classmethod
    def from_blocks(cls, blocks: Blocks, prefix: str) -> "GruParams":
        return cls(**{name: blocks[f"{prefix}.{name}"] for name in GRU_FIELDS})


def _check_gru_inputs(p: GruParams, x: np.ndarray, h: np.ndarray):
    if x.shape[-1] != p.input_dim:
        raise ShapeError(f"GRU input has {x.shape[-1]} features, expected {p.input_dim}")
    if h.shape[-1] != p.hidden_dim:
        raise ShapeError(f"GRU state has {h.shape[-1]} units, expected {p.hidden_dim}")


def gru_step(p: GruParams, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    One GRU update h -> h'. Leading axes of x and h are treated as a batch.

    Raises:
        ShapeError: On input or state dimension mismatch
    """
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    _check_gru_inputs(p, x, h)
    z = sigmoid(x @ p.W_z.T + h @ p.U_z.T + p.b_z)
    r = sigmoid(x @ p.W_r.T + h @ p.U_r.T + p.b_r)
    c = np.tanh(x @ p.W_h.T + (r * h) @ p.U_h.T + p.b_h)
    return (1.0 - z) * h + z * c


@dataclass
class GruCache:
    xs: np.ndarray
    h0: np.ndarray
    hs: np.ndarray
    zs: np.ndarray
    rs: np.ndarray
    cs: np.ndarray


def gru_sequence(p: GruParams, xs: np.ndarray, h0: np.ndarray) -> Tuple[np.ndarray, GruCache]:
    """
    Unroll a GRU over xs (N, L, input) from h0 (N, hidden).

    Returns:
        hs: (N, L, hidden) state after every step, and the cache for backprop
    """
    xs = np.asarray(xs, dtype=np.float64)
    h = np.asarray(h0, dtype=np.float64)
    _check_gru_inputs(p, xs, h)
    n, steps, _ = xs.shape
    # input projections for every step at once
    xz = xs @ p.W_z.T + p.b_z
    xr = xs @ p.W_r.T + p.b_r
    xh = xs @ p.W_h.T + p.b_h

    hs = np.empty((n, steps, p.hidden_dim))
    zs, rs, cs = np.empty_like(hs), np.empty_like(hs), np.empty_like(hs)
    for t in range(steps):
        z = sigmoid(xz[:, t] + h @ p.U_z.T)
        r = sigmoid(xr[:, t] + h @ p.U_r.T)
        c = np.tanh(xh[:, t] + (r * h) @ p.U_h.T)
        h = (1.0 - z) * h + z * c
        hs[:, t], zs[:, t], rs[:, t], cs[:, t] = h, z, r, c
    return hs, GruCache(xs, np.asarray(h0, dtype=np.float64), hs, zs, rs, cs)


def gru_sequence_backward(p: GruParams, cache: GruCache, dhs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, Blocks]:
    """
    Backpropagation through time.

    Args:
        dhs: dL/dh_t for every output state, shape (N, L, hidden)

    Returns:
        (dxs, dh0, grads) with grads keyed by GRU field name
    """
    n, steps, hidden = cache.hs.shape
    da_z = np.empty_like(cache.hs)
    da_r = np.empty_like(cache.hs)
    da_h = np.empty_like(cache.hs)
    dU_z = np.zeros((hidden, hidden))
    dU_r = np.zeros((hidden, hidden))
    dU_h = np.zeros((hidden, hidden))

    dh_next = np.zeros((n, hidden))
    for t in reversed(range(steps)):
        dh = dhs[:, t] + dh_next
        h_prev = cache.h0 if t == 0 else cache.hs[:, t - 1]
        z, r, c = cache.zs[:, t], cache.rs[:, t], cache.cs[:, t]

        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)

        dah = dc * (1.0 - c * c)
        dU_h += dah.T @ (r * h_prev)
        d_rh = dah @ p.U_h
        dh_prev += d_rh * r
        dar = d_rh * h_prev * r * (1.0 - r)
        daz = dz * z * (1.0 - z)

        dU_r += dar.T @ h_prev
        dU_z += daz.T @ h_prev
        dh_prev += dar @ p.U_r + daz @ p.U_z

        da_z[:, t], da_r[:, t], da_h[:, t] = daz, dar, dah
        dh_next = dh_prev

    xs = cache.xs
    grads = {
        "W_z": np.einsum("nlh,nli->hi", da_z, xs),
        "W_r": np.einsum("nlh,nli->hi", da_r, xs),
        "W_h": np.einsum("nlh,nli->hi", da_h, xs),
        "U_z": dU_z,
        "U_r": dU_r,
        "U_h": dU_h,
        "b_z": da_z.sum(axis=(0, 1)),
        "b_r": da_r.sum(axis=(0, 1)),
        "b_h": da_h.sum(axis=(0, 1)),
    }
    dxs = da_z @ p.W_z + da_r @ p.W_r + da_h @ p.W_h
    return dxs, dh_next, grads


# -------------------------------------------------------------------
# LOSS
# -------------------------------------------------------------------
def _check_congruent(pred: np.ndarray, target: np.ndarray, mask: Optional[np.ndarray]):
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if mask is not None and mask.shape != pred.shape:
        raise ShapeError(f"mask shape {mask.shape} != prediction shape {pred.shape}")


def mae_loss(pred: np.ndarray, target: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """
    Mean absolute error over all entries (or over mask-selected entries).

    Raises:
        ShapeError: If pred, target (and mask) are not congruent
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_congruent(pred, target, mask)
    diff = np.abs(pred - target)
    if mask is None:
        return float(diff.mean()) if diff.size else 0.0
    count = float(mask.sum())
    return float((diff * mask).sum() / count) if count else 0.0


def mae_grad(pred: np.ndarray, target: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Subgradient sign(pred - target) / count; zero at ties and outside the mask."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_congruent(pred, target, mask)
    sign = np.sign(pred - target)
    if mask is None:
        return sign / max(sign.size, 1)
    return sign * mask / max(float(mask.sum()), 1.0)


# -------------------------------------------------------------------
# NADAM
# -------------------------------------------------------------------
@dataclass
class OptimizerState:
    """
    Nadam state. `step` counts applied updates; the learning rate of update t
    (0-based) is lr0 / (1 + decay * t) under the inverse_time schedule and
    lr0 * drop_rate ** (t // drop_every) under the step schedule.
    """

    step: int
    first_moment: Blocks
    second_moment: Blocks
    lr0: float = 8e-4
    decay: float = 4e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    momentum_decay: float = 0.004
    mu_product: float = 1.0
    schedule: str = "inverse_time"
    drop_rate: float = 0.5
    drop_every: int = 0


def init_optimizer(params: Blocks, lr0: float = 8e-4, decay: float = 4e-3, **kwargs) -> OptimizerState:
    """Fresh Nadam state with zero moments congruent to params."""
    state = OptimizerState(
        step=0,
        first_moment={k: np.zeros_like(v) for k, v in params.items()},
        second_moment={k: np.zeros_like(v) for k, v in params.items()},
        lr0=lr0,
        decay=decay,
        **kwargs,
    )
    if state.schedule not in ("inverse_time", "step"):
        raise ArgumentError(f"Unknown learning-rate schedule '{state.schedule}'")
    return state


def learning_rate(state: OptimizerState, t: Optional[int] = None) -> float:
    """Effective learning rate of update index t (default: the next update)."""
    t = state.step if t is None else t
    if state.schedule == "step":
        if state.drop_every <= 0:
            return state.lr0
        return state.lr0 * state.drop_rate ** (t // state.drop_every)
    return state.lr0 / (1.0 + state.decay * t)


def _momentum(state: OptimizerState, t: int) -> float:
    return state.beta1 * (1.0 - 0.5 * 0.96 ** (t * state.momentum_decay))


def nadam_step(state: OptimizerState, params: Blocks, grads: Blocks) -> Tuple[Blocks, OptimizerState]:
    """
    Apply one Nesterov-Adam update.

    Returns new parameter blocks and a new state; inputs are not modified.

    Raises:
        ShapeError: If params, grads and state are not congruent
        NonFiniteGradientError: If any gradient entry is NaN or infinite;
            the update is rejected
    """
    if set(params) != set(grads) or set(params) != set(state.first_moment):
        raise ShapeError("params, grads and optimizer state must share block names")
    for name, value in params.items():
        if grads[name].shape != value.shape or state.first_moment[name].shape != value.shape:
            raise ShapeError(f"block '{name}' shape mismatch")

    bad = {name: int(np.size(g) - np.count_nonzero(np.isfinite(g))) for name, g in grads.items()}
    bad = {name: count for name, count in bad.items() if count}
    if bad:
        logger.error("Rejected update with non-finite gradients", extra={"error": str(bad), "step": state.step})
        raise NonFiniteGradientError(f"non-finite gradient in {len(bad)} block(s)", bad)

    lr = learning_rate(state)
    t = state.step + 1
    mu_t = _momentum(state, t)
    mu_next = _momentum(state, t + 1)
    mu_product = state.mu_product * mu_t
    mu_product_next = mu_product * mu_next
    bias2 = 1.0 - state.beta2 ** t

    new_params, first, second = {}, {}, {}
    for name, value in params.items():
        g = grads[name]
        m = state.beta1 * state.first_moment[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.second_moment[name] + (1.0 - state.beta2) * g * g
        denom = np.sqrt(v / bias2) + state.epsilon
        update = (lr * (1.0 - mu_t) / (1.0 - mu_product)) * g / denom \
            + (lr * mu_next / (1.0 - mu_product_next)) * m / denom
        new_params[name] = value - update
        first[name], second[name] = m, v

    new_state = replace(state, step=t, first_moment=first, second_moment=second, mu_product=mu_product)
    return new_params, new_state


# -------------------------------------------------------------------
# FINITE DIFFERENCES
# -------------------------------------------------------------------
Coordinate = Tuple[str, int]


def finite_diff_grad(f: Callable[[Blocks], float], params: Blocks, h: float = 1e-5,
                     coords: Optional[Sequence[Coordinate]] = None) -> Blocks:
    """
    Central differences (f(θ + h e) - f(θ - h e)) / 2h.

    Args:
        f: Scalar function of parameter blocks
        params: Point of evaluation; not modified
        h: Step size (> 0)
        coords: Optional (block name, flat index) pairs to evaluate; other
            entries of the result stay 0

    Returns:
        Blocks congruent to params holding the numeric gradient
    """
    if h <= 0:
        raise ArgumentError("finite difference step must be positive")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    result = {k: np.zeros_like(v) for k, v in work.items()}
    if coords is None:
        coords = [(name, i) for name, v in work.items() for i in range(v.size)]

    for name, index in coords:
        flat = work[name].reshape(-1)
        original = flat[index]
        flat[index] = original + h
        f_plus = f(work)
        flat[index] = original - h
        f_minus = f(work)
        flat[index] = original
        result[name].reshape(-1)[index] = (f_plus - f_minus) / (2.0 * h)
    return result


def sample_coordinates(params: Blocks, count: int, rng: np.random.Generator) -> List[Coordinate]:
    """Draw `count` distinct (block, flat index) pairs uniformly over all parameters."""
    names = list(params)
    sizes = np.array([params[name].size for name in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(count, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    coords = []
    for flat in np.sort(picks):
        block = int(np.searchsorted(offsets, flat, side="right") - 1)
        coords.append((names[block], int(flat - offsets[block])))
    return coords


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gather(blocks: Blocks, coords: Iterable[Coordinate]) -> np.ndarray:
    return np.array([blocks[name].reshape(-1)[index] for name, index in coords])
