"""Dense softmax classifier with hand-derived gradients and SGD with momentum.

Parameters are stored as ``weights[l]`` of shape ``(fan_in, fan_out)`` and
``biases[l]`` of shape ``(fan_out,)`` so a forward pass is ``a @ W + b``.
Everything runs in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, ShapeError, SpecError, TrainingError

PROB_FLOOR = 1e-12
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class NetworkSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"
    weight_decay: float = 0.0
    init_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise SpecError("layer_widths needs at least an input and an output width")
        if any(w <= 0 for w in self.layer_widths):
            raise SpecError(f"layer widths must be positive, got {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.activation!r}")
        if self.weight_decay < 0:
            raise SpecError("weight_decay must be nonnegative")
        if self.init_scale <= 0:
            raise SpecError("init_scale must be positive")

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]


@dataclass(frozen=True)
class SgdHyper:
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    milestones: tuple[int, ...] = ()
    decay_factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.base_lr <= 0:
            raise SpecError("base_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise SpecError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise SpecError("weight_decay must be nonnegative")
        if not 0 < self.decay_factor < 1:
            raise SpecError("decay_factor must lie in (0, 1)")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise SpecError(f"milestones must be strictly increasing: {self.milestones}")


@dataclass
class NetworkState:
    spec: NetworkSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    weight_buffers: list[np.ndarray] = field(default_factory=list)
    bias_buffers: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.weight_buffers:
            self.weight_buffers = [np.zeros_like(w) for w in self.weights]
        if not self.bias_buffers:
            self.bias_buffers = [np.zeros_like(b) for b in self.biases]
        widths = self.spec.layer_widths
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ShapeError("number of layers does not match the NetworkSpec")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[l], widths[l + 1]) or b.shape != (widths[l + 1],):
                raise ShapeError(f"layer {l}: parameter shapes {w.shape}, {b.shape} "
                                 f"do not match widths {widths[l]}->{widths[l + 1]}")

    def copy(self) -> NetworkState:
        return NetworkState(
            self.spec,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [v.copy() for v in self.weight_buffers],
            [v.copy() for v in self.bias_buffers],
        )

    def flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def digest(self) -> str:
        """Hash of every parameter and buffer byte; equal digests mean bitwise-equal states."""
        import hashlib

        h = hashlib.sha256()
        for arrays in (self.weights, self.biases, self.weight_buffers, self.bias_buffers):
            for a in arrays:
                h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def init_network(spec: NetworkSpec, rng: np.random.Generator) -> NetworkState:
    """Uniform init in [-s/sqrt(fan_in), s/sqrt(fan_in)] for weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = spec.init_scale / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkState(spec, weights, biases)


def _activate(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _activate_grad(z, a, kind):
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - a * a


def _check_inputs(state: NetworkState, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != state.spec.layer_widths[0]:
        raise ShapeError(f"expected inputs of width {state.spec.layer_widths[0]}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise InputError("inputs contain non-finite values")
    return x


def _forward_cache(state, x):
    zs, acts = [], [x]
    a = x
    last = len(state.weights) - 1
    for l, (w, b) in enumerate(zip(state.weights, state.biases)):
        z = a @ w + b
        zs.append(z)
        a = z if l == last else _activate(z, state.spec.activation)
        acts.append(a)
    return zs, acts


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def logits(state: NetworkState, inputs) -> np.ndarray:
    x = _check_inputs(state, inputs)
    return _forward_cache(state, x)[1][-1]


def forward(state: NetworkState, inputs) -> np.ndarray:
    """Class probabilities, one row per input row, floored at ``PROB_FLOOR``."""
    return np.maximum(softmax(logits(state, inputs)), PROB_FLOOR)


def soft_cross_entropy(p, target) -> np.ndarray | float:
    """``-sum_k target_k * ln p_k`` along the last axis.

    Works on single vectors or on row batches (returns one value per row).
    Probabilities are floored at ``PROB_FLOOR`` so the result stays finite.
    """
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"probabilities {p.shape} and target {t.shape} differ in shape")
    out = -(t * np.log(np.maximum(p, PROB_FLOOR))).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _l2(state: NetworkState) -> float:
    return sum(float((w * w).sum()) + float((b * b).sum()) for w, b in zip(state.weights, state.biases))


def loss(state: NetworkState, inputs, targets, weight_decay: float | None = None) -> float:
    """Mean soft cross-entropy over the batch plus ``weight_decay/2 * ||theta||^2``."""
    wd = state.spec.weight_decay if weight_decay is None else weight_decay
    x = _check_inputs(state, inputs)
    t = np.asarray(targets, dtype=np.float64)
    p = softmax(_forward_cache(state, x)[1][-1])
    ce = soft_cross_entropy(p, t)
    return float(np.mean(ce)) + 0.5 * wd * _l2(state)


def gradients(state: NetworkState, inputs, targets, weight_decay: float | None = None) -> Gradients:
    """Exact gradient of :func:`loss` with respect to every weight and bias."""
    wd = state.spec.weight_decay if weight_decay is None else weight_decay
    x = _check_inputs(state, inputs)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != (x.shape[0], state.spec.num_classes):
        raise ShapeError(f"targets shape {t.shape} does not match batch {x.shape[0]} x {state.spec.num_classes}")
    if x.shape[0] == 0:
        raise ShapeError("empty batch")
    zs, acts = _forward_cache(state, x)
    p = softmax(acts[-1])
    # targets sum to one per row, so d(-t.log softmax)/dz = p * sum(t) - t = p - t
    delta = (p * t.sum(axis=1, keepdims=True) - t) / x.shape[0]
    n_layers = len(state.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for l in range(n_layers - 1, -1, -1):
        gw[l] = acts[l].T @ delta + wd * state.weights[l]
        gb[l] = delta.sum(axis=0) + wd * state.biases[l]
        if l > 0:
            delta = (delta @ state.weights[l].T) * _activate_grad(zs[l - 1], acts[l], state.spec.activation)
    return Gradients(gw, gb)


def sgd_step(state: NetworkState, grads: Gradients, hyper: SgdHyper, lr: float) -> NetworkState:
    """``buf = momentum * buf + grad``; ``param -= lr * buf``. Returns a new state."""
    if len(grads.weights) != len(state.weights) or len(grads.biases) != len(state.biases):
        raise ShapeError("gradient structure does not match the network")
    new_w, new_b, new_vw, new_vb = [], [], [], []
    for l, (w, b, gw, gb, vw, vb) in enumerate(zip(
            state.weights, state.biases, grads.weights, grads.biases,
            state.weight_buffers, state.bias_buffers)):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ShapeError(f"layer {l}: gradient shape mismatch")
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise TrainingError("non-finite gradient", layer=l)
        vw = hyper.momentum * vw + gw
        vb = hyper.momentum * vb + gb
        new_vw.append(vw)
        new_vb.append(vb)
        new_w.append(w - lr * vw)
        new_b.append(b - lr * vb)
    return replace(state, weights=new_w, biases=new_b, weight_buffers=new_vw, bias_buffers=new_vb)


def lr_at(hyper: SgdHyper, epoch: int) -> float:
    passed = sum(1 for m in hyper.milestones if m <= epoch)
    return hyper.base_lr * hyper.decay_factor ** passed


def train_step(state: NetworkState, inputs, targets, hyper: SgdHyper, lr: float) -> NetworkState:
    grads = gradients(state, inputs, targets, weight_decay=hyper.weight_decay)
    return sgd_step(state, grads, hyper, lr)


def fit_hard_labels(
    spec: NetworkSpec,
    features: np.ndarray,
    labels: np.ndarray,
    hyper: SgdHyper,
    epochs: int,
    batch_size: int,
    init_rng: np.random.Generator,
    shuffle_rng,
) -> NetworkState:
    """Plain minibatch training on one-hot targets.

    ``shuffle_rng(epoch)`` must return the generator used to permute the data
    in that epoch.
    """
    state = init_network(spec, init_rng)
    targets = one_hot(labels, spec.num_classes)
    n = features.shape[0]
    for epoch in range(epochs):
        lr = lr_at(hyper, epoch)
        order = shuffle_rng(epoch).permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            state = train_step(state, features[idx], targets[idx], hyper, lr)
    return state
