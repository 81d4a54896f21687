"""Dense networks with exact reverse-mode gradients and Adam training.

Everything here is deliberately self-contained: forward, backward, the
optimizer, the learning-rate schedules, and the serialization format are
all in this module, with no framework underneath.  That keeps training
runs reproducible bit for bit from a seed and makes the gradient path
small enough to verify against finite differences in the test suite.

A network is a stack of affine layers: hidden layers share one
activation, the final layer applies an output transform (identity or
elementwise square; the square keeps downstream quantities nonnegative
without giving up smoothness).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC_NETWORK = b"MLP1"

ACTIVATIONS = ("tanh", "relu")
OUTPUTS = ("identity", "square")


@dataclass
class Mlp:
    """Fully connected network; weights[l] has shape (sizes[l], sizes[l+1])."""

    sizes: tuple
    weights: list
    biases: list
    activation: str
    output: str

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"need at least two positive layer sizes, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output not in OUTPUTS:
            raise ValueError(f"unknown output transform {self.output!r}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("layer count does not match sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise ValueError(f"layer {l} parameter shapes do not match sizes")
        self.sizes = sizes

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_mlp(sizes, activation: str, output: str, seed: int) -> Mlp:
    """Glorot-uniform weights, zero biases, drawn layer by layer from seed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    sizes = tuple(int(s) for s in sizes)
    weights, biases = [], []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-limit, limit, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return Mlp(sizes, weights, biases, activation, output)


def parameters(mlp: Mlp) -> list:
    """Trainable arrays in a fixed order: W0, b0, W1, b1, ...

    The returned arrays are the live model parameters, so optimizer
    updates applied to them train the model in place.
    """
    params = []
    for w, b in zip(mlp.weights, mlp.biases):
        params.extend([w, b])
    return params


def _as_batch(x: np.ndarray, d_in: int):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != d_in:
            raise ValueError(f"input has size {x.shape[0]}, network expects {d_in}")
        return x[None, :], True
    if x.ndim == 2 and x.shape[1] == d_in:
        return x, False
    raise ValueError(f"input shape {x.shape} does not match input size {d_in}")


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # relu slope at exactly zero is taken as zero
    return 1.0 - a ** 2 if name == "tanh" else (z > 0.0).astype(float)


def forward_trace(mlp: Mlp, x: np.ndarray):
    """All intermediate states of a forward pass.

    Returns (pre_activations, activations): activations[0] is the input
    batch, activations[-1] the network output after the output transform,
    and pre_activations[l] the affine output of layer l.  Input of any
    shape (d,) is treated as a single-row batch.
    """
    batch, _ = _as_batch(x, mlp.sizes[0])
    pre, act = [], [batch]
    current = batch
    last = len(mlp.weights) - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = current @ w + b
        pre.append(z)
        if l < last:
            current = _activate(mlp.activation, z)
        elif mlp.output == "square":
            current = z ** 2
        else:
            current = z
        act.append(current)
    return pre, act


def forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Network output for a single input vector or a batch of rows."""
    _, single = _as_batch(x, mlp.sizes[0])
    out = forward_trace(mlp, x)[1][-1]
    return out[0] if single else out


def backward(mlp: Mlp, x: np.ndarray, upstream: np.ndarray, trace=None):
    """Exact gradients of sum(upstream * forward(x)) in the batch sense.

    Returns (weight_grads, bias_grads, input_grad).  For a batch input the
    parameter gradients accumulate over rows, so the caller controls the
    loss scaling entirely through upstream.  A (pre, act) pair from
    forward_trace on the same input may be passed to skip the recompute.
    """
    batch, single = _as_batch(x, mlp.sizes[0])
    upstream = np.asarray(upstream, dtype=float)
    if single:
        upstream = upstream[None, :]
    if upstream.shape != (batch.shape[0], mlp.sizes[-1]):
        raise ValueError(f"upstream shape {upstream.shape} does not match output")

    pre, act = forward_trace(mlp, batch) if trace is None else trace
    delta = upstream
    if mlp.output == "square":
        delta = delta * (2.0 * pre[-1])
    weight_grads = [None] * len(mlp.weights)
    bias_grads = [None] * len(mlp.weights)
    for l in range(len(mlp.weights) - 1, -1, -1):
        weight_grads[l] = act[l].T @ delta
        bias_grads[l] = delta.sum(axis=0)
        delta = delta @ mlp.weights[l].T
        if l > 0:
            delta = delta * _activate_grad(mlp.activation, pre[l - 1], act[l])
    input_grad = delta[0] if single else delta
    return weight_grads, bias_grads, input_grad


@dataclass
class LrSchedule:
    """Constant or half-cosine learning-rate profile over a fixed step count."""

    kind: str
    lr_start: float
    lr_end: float
    total_steps: int

    def __post_init__(self):
        if self.kind not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.lr_start <= 0.0 or self.lr_end <= 0.0:
            raise ValueError("learning rates must be positive")
        if self.lr_end > self.lr_start:
            raise ValueError("schedule must not increase the learning rate")
        if self.total_steps < 1:
            raise ValueError("schedule needs at least one step")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Learning rate before optimizer step `step` (0-based, up to total_steps)."""
    if step < 0 or step > schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if schedule.kind == "constant":
        return schedule.lr_start
    span = schedule.lr_start - schedule.lr_end
    return schedule.lr_end + 0.5 * span * (1.0 + np.cos(np.pi * step / schedule.total_steps))


@dataclass
class AdamState:
    """Optimizer state; moment arrays mirror the parameter shapes."""

    base_lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decoupled: bool = True
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def make_adam(params: list, base_lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0, decoupled: bool = True) -> AdamState:
    if base_lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {base_lr}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError("moment coefficients must lie in [0, 1)")
    if eps <= 0.0 or weight_decay < 0.0:
        raise ValueError("eps must be positive and weight decay nonnegative")
    state = AdamState(base_lr=float(base_lr), beta1=float(beta1),
                      beta2=float(beta2), eps=float(eps),
                      weight_decay=float(weight_decay), decoupled=bool(decoupled))
    state.m = [np.zeros_like(p) for p in params]
    state.v = [np.zeros_like(p) for p in params]
    return state


def adam_step(state: AdamState, params: list, grads: list,
              lr: float | None = None) -> None:
    """One in-place Adam update with bias correction.

    Decoupled weight decay multiplies parameters by (1 - lr*wd) alongside
    the moment update; the coupled variant folds wd*p into the gradient
    instead.  Non-finite gradients abort before any state is touched.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient lists do not match optimizer state")
    for g in grads:
        if not np.isfinite(np.sum(g)):
            raise ValueError("non-finite gradient passed to optimizer")
    lr = state.base_lr if lr is None else float(lr)
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not state.decoupled and state.weight_decay > 0.0:
            g = g + state.weight_decay * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        denom = np.sqrt(v)
        denom *= 1.0 / np.sqrt(bc2)
        denom += state.eps
        np.divide(m, denom, out=denom)
        if state.decoupled and state.weight_decay > 0.0:
            p *= 1.0 - lr * state.weight_decay
        denom *= lr / bc1
        p -= denom


def mlp_to_bytes(mlp: Mlp) -> bytes:
    """Binary form: magic, layer sizes, activation/output codes, f64 payload."""
    parts = [MAGIC_NETWORK,
             struct.pack("<I", len(mlp.sizes)),
             struct.pack(f"<{len(mlp.sizes)}I", *mlp.sizes),
             struct.pack("<BB", ACTIVATIONS.index(mlp.activation),
                         OUTPUTS.index(mlp.output))]
    for w, b in zip(mlp.weights, mlp.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def mlp_from_bytes(blob: bytes, offset: int = 0):
    """Inverse of mlp_to_bytes; returns (mlp, offset past the payload)."""
    if blob[offset:offset + 4] != MAGIC_NETWORK:
        raise ValueError(f"not a network blob: bad magic {blob[offset:offset + 4]!r}")
    offset += 4
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if count < 2:
        raise ValueError(f"network blob declares {count} layer sizes")
    sizes = struct.unpack_from(f"<{count}I", blob, offset)
    offset += 4 * count
    act_code, out_code = struct.unpack_from("<BB", blob, offset)
    offset += 2
    if act_code >= len(ACTIVATIONS) or out_code >= len(OUTPUTS):
        raise ValueError("network blob has unknown activation or output code")
    weights, biases = [], []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(blob, dtype="<f8", count=d_in * d_out, offset=offset)
        offset += 8 * d_in * d_out
        b = np.frombuffer(blob, dtype="<f8", count=d_out, offset=offset)
        offset += 8 * d_out
        weights.append(w.reshape(d_in, d_out).copy())
        biases.append(b.copy())
    mlp = Mlp(sizes, weights, biases, ACTIVATIONS[act_code], OUTPUTS[out_code])
    return mlp, offset


def save_mlp(path, mlp: Mlp) -> None:
    with open(path, "wb") as fh:
        fh.write(mlp_to_bytes(mlp))


def load_mlp(path) -> Mlp:
    with open(path, "rb") as fh:
        blob = fh.read()
    mlp, offset = mlp_from_bytes(blob)
    if offset != len(blob):
        raise ValueError(f"trailing bytes in network file: {len(blob) - offset}")
    return mlp
