"""Tiny feed-forward policy networks with exact manual backpropagation.

Each decision node of the option graph owns one of these networks: three
fully connected tanh hidden layers followed by a softmax head over the
node's child choices.  Networks are small by design, so everything is
plain numpy with no autodiff framework.

Parameter flattening order (fixed, relied on by GradVector and the
checkpoint format): layer by layer from the input side, weights before
biases, weight matrices raveled row-major.  For layer sizes
``d0 -> d1 -> d2 -> d3 -> d4`` the flat vector is
``W1.ravel(), b1, W2.ravel(), b2, W3.ravel(), b3, W4.ravel(), b4``
where ``Wk`` has shape ``(dk, dk-1)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CHECKPOINT_MAGIC = b"MLNET\x00"
CHECKPOINT_VERSION = 1


class DimensionError(ValueError):
    """An input, action index, or gradient does not match the network dims."""


@dataclass(frozen=True)
class NetParams:
    """Immutable parameter snapshot of one policy network.

    weights[k] has shape (dims[k+1], dims[k]); biases[k] has shape
    (dims[k+1],).  There are exactly four layers: three hidden plus the
    softmax head.
    """

    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) != 4 or len(self.biases) != 4:
            raise DimensionError("expected 3 hidden layers plus a softmax head")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise DimensionError(f"layer {k}: weight rows {w.shape[0]} != bias size {b.shape[0]}")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise DimensionError(f"layer {k}: input dim {w.shape[1]} does not match previous layer")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {k}: non-finite parameter values")
        dims = (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)
        object.__setattr__(self, "_dims", dims)
        object.__setattr__(self, "_n_params",
                           sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    @property
    def dims(self) -> tuple:
        """(input, hidden1, hidden2, hidden3, output) sizes."""
        return self._dims

    @property
    def n_params(self) -> int:
        return self._n_params


@dataclass
class ForwardTape:
    """Record of one forward pass, sufficient to backpropagate exactly.

    Stores the input, per-layer pre-activations, and the output log-prob
    vector; hidden activations are tanh(z) which is recomputed on demand
    (bit-identical, tanh is deterministic).
    """

    x: np.ndarray
    pre_activations: list
    log_probs: np.ndarray

    def replay(self) -> np.ndarray:
        """Recompute the action distribution from the recorded tape."""
        return np.exp(self.log_probs)


def init_params(rng: np.random.Generator, input_dim: int, output_dim: int, hidden: int = 32) -> NetParams:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    sizes = [input_dim, hidden, hidden, hidden, output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return NetParams(tuple(weights), tuple(biases))


def forward(params: NetParams, x: np.ndarray) -> tuple:
    """Forward pass: returns (action distribution, ForwardTape).

    The head is a softmax computed through a stable log-sum-exp, so the
    returned distribution always sums to 1 and log-probs stay finite even
    when the logits saturate.
    """
    if not isinstance(x, np.ndarray) or x.dtype != np.float64:
        x = np.asarray(x, dtype=float)
    if x.shape != (params._dims[0],):
        raise DimensionError(f"input shape {x.shape} != ({params._dims[0]},)")
    w1, w2, w3, w4 = params.weights
    b1, b2, b3, b4 = params.biases
    z1 = w1.dot(x) + b1
    z2 = w2.dot(np.tanh(z1)) + b2
    z3 = w3.dot(np.tanh(z2)) + b3
    logits = w4.dot(np.tanh(z3)) + b4
    shifted = logits - logits.max()
    log_probs = shifted - np.log(np.exp(shifted).sum())
    return np.exp(log_probs), ForwardTape(x=x, pre_activations=[z1, z2, z3, logits],
                                          log_probs=log_probs)


def logprob_grad(params: NetParams, tape: ForwardTape, action: int) -> np.ndarray:
    """Exact gradient of log pi(action | tape.x) w.r.t. the flat parameters.

    Backpropagates d log softmax = one_hot(action) - probs through the
    tanh layers; no finite differences anywhere.
    """
    out = np.zeros(params.n_params)
    logprob_grad_into(params, tape, action, 1.0, out)
    return out


def logprob_grad_into(params: NetParams, tape: ForwardTape, action: int,
                      weight: float, out: np.ndarray) -> float:
    """Accumulate weight * grad(log pi(action)) into ``out`` in flat order.

    Returns the recorded log-probability of ``action``.  Used by the
    gradient estimator to avoid materialising one flat vector per
    decision.
    """
    n_out = params.dims[-1]
    if not 0 <= action < n_out:
        raise DimensionError(f"action {action} out of range for {n_out} outputs")
    probs = np.exp(tape.log_probs)
    delta = -probs
    delta[action] += 1.0
    delta *= weight

    activations = [tape.x] + [np.tanh(z) for z in tape.pre_activations[:-1]]
    offsets = _flat_offsets(params)
    for k in range(3, -1, -1):
        w_off, b_off = offsets[k]
        w = params.weights[k]
        a_in = activations[k]
        out[w_off:w_off + w.size] += np.outer(delta, a_in).ravel()
        out[b_off:b_off + delta.size] += delta
        if k > 0:
            delta = (w.T @ delta) * (1.0 - activations[k] ** 2)
    return float(tape.log_probs[action])


def _flat_offsets(params: NetParams) -> list:
    """(weight_offset, bias_offset) per layer in the documented flat order."""
    cached = getattr(params, "_offsets", None)
    if cached is not None:
        return cached
    offsets = []
    pos = 0
    for w, b in zip(params.weights, params.biases):
        offsets.append((pos, pos + w.size))
        pos += w.size + b.size
    object.__setattr__(params, "_offsets", offsets)
    return offsets


def flatten(params: NetParams) -> np.ndarray:
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(template: NetParams, flat: np.ndarray) -> NetParams:
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (template.n_params,):
        raise DimensionError(f"flat vector length {flat.shape} != {template.n_params}")
    weights, biases, pos = [], [], 0
    for w, b in zip(template.weights, template.biases):
        weights.append(flat[pos:pos + w.size].reshape(w.shape))
        pos += w.size
        biases.append(flat[pos:pos + b.size])
        pos += b.size
    return NetParams(tuple(weights), tuple(biases))


def sgd_step(params: NetParams, grad: np.ndarray, learning_rate: float,
             direction: str = "ascent") -> NetParams:
    """One SGD update, returning a fresh NetParams (inputs untouched)."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != (params.n_params,):
        raise DimensionError(f"gradient length {grad.shape} != {params.n_params}")
    if not np.isfinite(grad).all():
        raise ValueError("non-finite gradient entries")
    if learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    if direction not in ("ascent", "descent"):
        raise ValueError(f"direction must be 'ascent' or 'descent', got {direction!r}")
    sign = 1.0 if direction == "ascent" else -1.0
    flat = flatten(params) + sign * learning_rate * grad
    return unflatten(params, flat)


def save_checkpoint(path, param_sets: dict) -> None:
    """Write named parameter sets to a versioned binary checkpoint.

    Layout: magic, u32 version, u32 set count; then per set a
    length-prefixed utf-8 name, u32 dim count, u32 dims, and the float32
    parameter array in the documented flattening order.  Everything is
    little-endian.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(param_sets)))
        for name, params in param_sets.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            dims = params.dims
            fh.write(struct.pack("<I", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(flatten(params).astype("<f4").tobytes())


def load_checkpoint(path) -> dict:
    """Read a checkpoint written by save_checkpoint; returns {name: NetParams}."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a mergelab checkpoint (bad magic {magic!r})")
        version, n_sets = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        out = {}
        for _ in range(n_sets):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (n_dims,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{n_dims}I", fh.read(4 * n_dims))
            count = sum(dims[k + 1] * dims[k] + dims[k + 1] for k in range(len(dims) - 1))
            flat = np.frombuffer(fh.read(4 * count), dtype="<f4").astype(float)
            template = _zero_params(dims)
            out[name] = unflatten(template, flat)
        return out


def _zero_params(dims) -> NetParams:
    weights = tuple(np.zeros((dims[k + 1], dims[k])) for k in range(len(dims) - 1))
    biases = tuple(np.zeros(dims[k + 1]) for k in range(len(dims) - 1))
    return NetParams(weights, biases)
