"""Two-hidden-layer tanh MLP policy with hand-written backprop and Adam."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ssrl.replay import BatchSample

CATEGORICAL = "categorical"
GAUSSIAN = "gaussian-mean"
HIDDEN = 64


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass
class PolicyParams:
    """Flat parameter vector plus the layer sizes it is cut into.

    Layout: W1 (in, h1), b1, W2 (h1, h2), b2, W3 (h2, out), b3. Weights are
    stored row-major so that ``x @ W`` maps a batch of rows forward.
    """

    flat: np.ndarray
    sizes: tuple[int, ...]
    head: str

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) != 4 or min(self.sizes) < 1:
            raise ShapeError(f"sizes must be (input, hidden, hidden, output), got {self.sizes}")
        if self.head not in (CATEGORICAL, GAUSSIAN):
            raise ValueError(f"unknown head {self.head!r}")
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (n_params(self.sizes),):
            raise ShapeError(f"flat vector has {self.flat.size} entries, sizes imply {n_params(self.sizes)}")
        if not np.all(np.isfinite(self.flat)):
            raise NumericError("parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return _unflatten(self.flat, self.sizes)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.flat.copy(), self.sizes, self.head)


def n_params(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def _unflatten(flat: np.ndarray, sizes) -> list[tuple[np.ndarray, np.ndarray]]:
    out, i = [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        W = flat[i:i + a * b].reshape(a, b)
        i += a * b
        out.append((W, flat[i:i + b]))
        i += b
    return out


def init_params(input_dim: int, output_dim: int, head: str, rng: np.random.Generator,
                hidden: int = HIDDEN) -> PolicyParams:
    """Glorot-uniform weights, zero biases."""
    sizes = (input_dim, hidden, hidden, output_dim)
    parts = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (a + b))
        parts.append(rng.uniform(-limit, limit, size=a * b))
        parts.append(np.zeros(b))
    return PolicyParams(np.concatenate(parts), sizes, head)


def _check_obs(params: PolicyParams, obs) -> np.ndarray:
    x = np.asarray(obs, dtype=np.float64)
    if x.shape[-1] != params.input_dim or x.ndim not in (1, 2):
        raise ShapeError(f"observation shape {x.shape} does not match input_dim {params.input_dim}")
    return x


def forward(params: PolicyParams, obs) -> np.ndarray:
    """Logits (categorical) or mean action (gaussian) for one or many observations."""
    x = _check_obs(params, obs)
    (W1, b1), (W2, b2), (W3, b3) = params.layers()
    h1 = np.tanh(x @ W1 + b1)
    h2 = np.tanh(h1 @ W2 + b2)
    return h2 @ W3 + b3


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_action(head_output: np.ndarray, head: str, rng: np.random.Generator,
                  sigma: float = 0.3, low: float = -1.0, high: float = 1.0):
    """Draw an action from the policy distribution at ``head_output``."""
    out = np.asarray(head_output, dtype=np.float64)
    if head == CATEGORICAL:
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite logits {out}")
        p = softmax(out)
        # inverse-CDF draw; faster than Generator.choice for one sample
        idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
        return min(idx, out.shape[-1] - 1)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return np.clip(out + sigma * rng.standard_normal(out.shape), low, high)


def greedy_action(head_output: np.ndarray, head: str, low: float = -1.0, high: float = 1.0):
    if head == CATEGORICAL:
        return int(np.argmax(head_output))
    return np.clip(np.asarray(head_output, dtype=np.float64), low, high)


def _backward(params: PolicyParams, x, h1, h2, d_out) -> np.ndarray:
    (W1, _), (W2, _), (W3, _) = params.layers()
    gW3 = h2.T @ d_out
    gb3 = d_out.sum(axis=0)
    d2 = (d_out @ W3.T) * (1.0 - h2 * h2)
    gW2 = h1.T @ d2
    gb2 = d2.sum(axis=0)
    d1 = (d2 @ W2.T) * (1.0 - h1 * h1)
    gW1 = x.T @ d1
    gb1 = d1.sum(axis=0)
    return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2, gW3.ravel(), gb3])


def _forward_cache(params: PolicyParams, x):
    (W1, b1), (W2, b2), (W3, b3) = params.layers()
    h1 = np.tanh(x @ W1 + b1)
    h2 = np.tanh(h1 @ W2 + b2)
    return h1, h2, h2 @ W3 + b3


def _check_batch(params: PolicyParams, batch: BatchSample):
    x = _check_obs(params, batch.observations)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError("batch observations must be a non-empty matrix")
    if len(batch.actions) != x.shape[0]:
        raise ShapeError("observation and action counts differ")
    return x


def discrete_loss_and_grad(params: PolicyParams, batch: BatchSample,
                           entropy_coef: float = 0.0) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the batch actions, minus an optional entropy bonus."""
    x = _check_batch(params, batch)
    a = np.asarray(batch.actions, dtype=np.int64).reshape(-1)
    if a.min() < 0 or a.max() >= params.output_dim:
        raise ShapeError("action index out of range for the categorical head")
    n = x.shape[0]
    h1, h2, logits = _forward_cache(params, x)
    logp = log_softmax(logits)
    p = np.exp(logp)
    rows = np.arange(n)
    loss = -logp[rows, a].mean()
    d = p.copy()
    d[rows, a] -= 1.0
    d /= n
    if entropy_coef:
        ent = -(p * logp).sum(axis=1)
        loss -= entropy_coef * ent.mean()
        # d(-H)/dz_j = p_j (log p_j + H)
        d += entropy_coef * p * (logp + ent[:, None]) / n
    return float(loss), _backward(params, x, h1, h2, d)


def continuous_loss_and_grad(params: PolicyParams, batch: BatchSample) -> tuple[float, np.ndarray]:
    """Squared error between predicted mean actions and batch actions, averaged over batch and dims."""
    x = _check_batch(params, batch)
    target = np.asarray(batch.actions, dtype=np.float64).reshape(x.shape[0], -1)
    if target.shape[1] != params.output_dim:
        raise ShapeError(f"action dim {target.shape[1]} != output dim {params.output_dim}")
    h1, h2, mean = _forward_cache(params, x)
    diff = mean - target
    loss = float(np.mean(diff * diff))
    return loss, _backward(params, x, h1, h2, 2.0 * diff / diff.size)


def loss_and_grad(params: PolicyParams, batch: BatchSample, entropy_coef: float = 0.0):
    if params.head == CATEGORICAL:
        return discrete_loss_and_grad(params, batch, entropy_coef)
    return continuous_loss_and_grad(params, batch)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, lr: float = 1e-3) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, lr)


def adam_step(params: PolicyParams, grad: np.ndarray, state: AdamState) -> tuple[PolicyParams, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.flat.shape or state.m.shape != grad.shape:
        raise ShapeError("gradient, parameters and optimizer state must have equal length")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    flat = params.flat - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)
    return PolicyParams(flat, params.sizes, params.head), new_state


def grad_check(loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]], theta: np.ndarray,
               h: float = 1e-5, max_coords: int = 4096, subset: int = 256,
               rng: np.random.Generator | None = None, floor: float = 1e-8) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn`` maps a flat vector to ``(loss, grad)``. Vectors longer than
    ``max_coords`` are checked on a random ``subset`` of coordinates.
    Relative error per coordinate is ``|g - n| / max(|g|, |n|, floor)``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    _, grad = loss_fn(theta)
    coords = np.arange(theta.size)
    if theta.size > max_coords:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(theta.size, size=subset, replace=False)
    worst = 0.0
    probe = theta.copy()
    for i in coords:
        probe[i] = theta[i] + h
        up = loss_fn(probe)[0]
        probe[i] = theta[i] - h
        down = loss_fn(probe)[0]
        probe[i] = theta[i]
        num = (up - down) / (2 * h)
        scale = max(abs(grad[i]), abs(num), floor)
        worst = max(worst, abs(grad[i] - num) / scale)
    return float(worst)


def save_params(params: PolicyParams, path) -> None:
    """Header line ``head in h1 h2 out`` followed by little-endian float64 values."""
    header = f"{params.head} {' '.join(str(s) for s in params.sizes)}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(params.flat.astype("<f8").tobytes())


def load_params(path) -> PolicyParams:
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        data = fh.read()
    if len(header) != 5:
        raise ShapeError(f"malformed checkpoint header {header}")
    head, sizes = header[0], tuple(int(x) for x in header[1:])
    flat = np.frombuffer(data, dtype="<f8").astype(np.float64)
    return PolicyParams(flat, sizes, head)
