"""Dense MLP arithmetic with hand-derived gradients and first-order optimizers.

Batches are rows: an input ``x`` of shape ``(n, d_in)`` maps to ``(n, d_out)``.
Layer weights are stored ``[out x in]`` so a layer computes ``x @ W.T + b``.
Everything is float64.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericError

ACTIVATIONS = ("relu", "tanh", "identity")


def as_mat(x) -> np.ndarray:
    """Coerce to a 2-D float64 array (a 1-D input becomes a single row)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ConfigError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


@dataclass
class MlpParams:
    """Weights and biases of a stack of dense layers.

    ``weights[i]`` has shape ``(out_i, in_i)``, ``biases[i]`` has shape
    ``(1, out_i)`` and ``activations[i]`` is one of ``relu``, ``tanh`` or
    ``identity``. Gradients use the same container.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...]

    def __post_init__(self):
        self.activations = tuple(self.activations)
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ConfigError("weights, biases and activations must have equal length")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ConfigError(f"layer {i}: unknown activation {act!r}")
            if w.ndim != 2 or b.shape != (1, w.shape[0]):
                raise ConfigError(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ConfigError(
                    f"layer {i}: input dim {w.shape[1]} != previous output dim "
                    f"{self.weights[i - 1].shape[0]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order ``W0, b0, W1, b1, ...``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray], activations) -> "MlpParams":
        return cls(list(arrays[0::2]), list(arrays[1::2]), tuple(activations))

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activations)

    def zeros_like(self) -> "MlpParams":
        return self.map(np.zeros_like)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "MlpParams":
        return MlpParams.from_arrays([fn(a) for a in self.arrays()], self.activations)

    def zip_map(self, other: "MlpParams", fn) -> "MlpParams":
        check_same_shape(self, other)
        return MlpParams.from_arrays(
            [fn(a, b) for a, b in zip(self.arrays(), other.arrays())], self.activations
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "MlpParams":
        out, pos = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[pos:pos + a.size], dtype=np.float64).reshape(a.shape).copy())
            pos += a.size
        if pos != len(vec):
            raise ConfigError(f"flat vector has {len(vec)} entries, expected {pos}")
        return MlpParams.from_arrays(out, self.activations)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())


def check_same_shape(a: MlpParams, b: MlpParams) -> None:
    sa = [x.shape for x in a.arrays()]
    sb = [x.shape for x in b.arrays()]
    if sa != sb:
        raise ConfigError(f"parameter shapes differ: {sa} vs {sb}")


def init_mlp(sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases.

    ``sizes`` lists layer widths including the input, so ``len(activations)``
    must be ``len(sizes) - 1``.
    """
    if len(activations) != len(sizes) - 1 or len(sizes) < 2:
        raise ConfigError("need len(sizes) - 1 activations and at least one layer")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if fan_in < 1 or fan_out < 1:
            raise ConfigError(f"layer sizes must be positive, got {list(sizes)}")
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros((1, fan_out)))
    return MlpParams(weights, biases, tuple(activations))


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class ForwardTrace:
    """Per-layer inputs and pre-activations recorded by :func:`mlp_forward`."""

    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


def mlp_forward(p: MlpParams, x) -> ForwardTrace:
    x = as_mat(x)
    if x.shape[1] != p.in_dim:
        raise ConfigError(f"input has {x.shape[1]} columns, network expects {p.in_dim}")
    trace = ForwardTrace()
    h = x
    for w, b, act in zip(p.weights, p.biases, p.activations):
        trace.inputs.append(h)
        z = h @ w.T + b
        h = _act(act, z)
        trace.pre.append(z)
        trace.post.append(h)
    return trace


def mlp_apply(p: MlpParams, x) -> np.ndarray:
    """Forward pass returning only the output."""
    return mlp_forward(p, x).output


def mlp_backward(p: MlpParams, trace: ForwardTrace, grad_out) -> tuple[MlpParams, np.ndarray]:
    """Reverse-mode gradients of a traced forward pass.

    Returns ``(grad_params, grad_input)`` where ``grad_out`` is the gradient of
    the scalar loss with respect to the network output.
    """
    g = as_mat(grad_out)
    if g.shape != trace.output.shape:
        raise ConfigError(f"grad_out shape {g.shape} != output shape {trace.output.shape}")
    gw = [None] * p.n_layers
    gb = [None] * p.n_layers
    for i in reversed(range(p.n_layers)):
        dz = g * _act_grad(p.activations[i], trace.pre[i], trace.post[i])
        gw[i] = dz.T @ trace.inputs[i]
        gb[i] = dz.sum(axis=0, keepdims=True)
        g = dz @ p.weights[i]
    return MlpParams(gw, gb, p.activations), g


def finite_diff_grad(loss: Callable[[MlpParams], float], p: MlpParams, h: float = 1e-5) -> MlpParams:
    """Central-difference gradient of ``loss`` at ``p``, one coordinate at a time."""
    if h <= 0:
        raise ConfigError("finite-difference step must be positive")
    base = p.flat()
    grad = np.zeros_like(base)
    for i in range(base.size):
        orig = base[i]
        base[i] = orig + h
        up = loss(p.with_flat(base))
        base[i] = orig - h
        down = loss(p.with_flat(base))
        base[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return p.with_flat(grad)


def max_relative_error(a: MlpParams | np.ndarray, b: MlpParams | np.ndarray, floor: float = 1e-8) -> float:
    """``max |a - b| / max(|a| + |b|, floor)`` over all coordinates."""
    fa = a.flat() if isinstance(a, MlpParams) else np.ravel(a)
    fb = b.flat() if isinstance(b, MlpParams) else np.ravel(b)
    denom = np.maximum(np.abs(fa) + np.abs(fb), floor)
    return float(np.max(np.abs(fa - fb) / denom)) if fa.size else 0.0


@dataclass
class OptState:
    """Optimizer state. ``kind`` is ``"sgd"`` or ``"adam"``."""

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None
    t: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")


def sgd(lr: float) -> OptState:
    return OptState(kind="sgd", lr=lr)


def adam(lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptState:
    return OptState(kind="adam", lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def _check_finite_grad(g: MlpParams) -> None:
    for idx, a in enumerate(g.arrays()):
        bad = np.argwhere(~np.isfinite(a))
        if bad.size:
            layer, part = divmod(idx, 2)
            name = "bias" if part else "weight"
            raise NumericError(
                f"non-finite gradient at layer {layer} {name} index {tuple(int(i) for i in bad[0])}"
            )


def opt_step(p: MlpParams, g: MlpParams, s: OptState) -> tuple[MlpParams, OptState]:
    """One optimizer step; returns new parameters and a new state."""
    check_same_shape(p, g)
    _check_finite_grad(g)
    params, grads = p.arrays(), g.arrays()
    if s.kind == "sgd":
        new = [a - s.lr * da for a, da in zip(params, grads)]
        return MlpParams.from_arrays(new, p.activations), OptState("sgd", s.lr, t=s.t + 1)

    m = s.m if s.m is not None else [np.zeros_like(a) for a in params]
    v = s.v if s.v is not None else [np.zeros_like(a) for a in params]
    if [a.shape for a in m] != [a.shape for a in params]:
        raise ConfigError("optimizer moment buffers do not match parameter shapes")
    t = s.t + 1
    m = [s.beta1 * mi + (1.0 - s.beta1) * gi for mi, gi in zip(m, grads)]
    v = [s.beta2 * vi + (1.0 - s.beta2) * gi * gi for vi, gi in zip(v, grads)]
    c1 = 1.0 - s.beta1 ** t
    c2 = 1.0 - s.beta2 ** t
    new = [a - s.lr * (mi / c1) / (np.sqrt(vi / c2) + s.eps) for a, mi, vi in zip(params, m, v)]
    state = OptState("adam", s.lr, s.beta1, s.beta2, s.eps, m, v, t)
    return MlpParams.from_arrays(new, p.activations), state


def params_checksum(*ps: MlpParams) -> str:
    """Hex digest of the raw bytes of the given parameter sets."""
    h = hashlib.sha256()
    for p in ps:
        for a in p.arrays():
            h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()
