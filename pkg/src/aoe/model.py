"""Fully connected ReLU network with hand-written backprop and SGD-momentum."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from aoe.exceptions import InvalidArgumentError
from aoe.rng import SeededRng

CHECKPOINT_FORMAT = "aoe-mlp/1"


@dataclass
class MlpParams:
    """Weights ``W[l]`` have shape ``(dims[l+1], dims[l])``; biases ``(dims[l+1],)``."""

    layer_dims: tuple
    weights: list
    biases: list

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2:
            raise InvalidArgumentError("need at least input and output dims")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise InvalidArgumentError("one weight matrix and bias per layer required")
        for ell, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[ell + 1], self.layer_dims[ell])
            if W.shape != shape or b.shape != (shape[0],):
                raise InvalidArgumentError(
                    f"layer {ell}: expected W{shape} b({shape[0]},), got W{W.shape} b{b.shape}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list:
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_dims, [W.copy() for W in self.weights],
                         [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class GradientBundle:
    weights: list
    biases: list

    def arrays(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        return GradientBundle([a + b for a, b in zip(self.weights, other.weights)],
                              [a + b for a, b in zip(self.biases, other.biases)])

    def scaled(self, c: float) -> "GradientBundle":
        return GradientBundle([c * a for a in self.weights], [c * a for a in self.biases])


@dataclass
class OptimizerState:
    lr_base: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epoch: int = 0
    total_epochs: int = 100
    momentum_buffers: list = field(default=None)

    def __post_init__(self):
        if self.lr_base < 0:
            raise InvalidArgumentError("lr_base must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidArgumentError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidArgumentError("weight_decay must be >= 0")

    @classmethod
    def for_params(cls, params: MlpParams, **kw) -> "OptimizerState":
        state = cls(**kw)
        state.momentum_buffers = [np.zeros_like(a) for a in params.arrays()]
        return state


def init_params(dims, rng: SeededRng) -> MlpParams:
    """Glorot-uniform weights drawn row-major layer by layer; zero biases."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise InvalidArgumentError("dims needs at least two entries")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-bound, bound, size=fan_in * fan_out).reshape(fan_out, fan_in)
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return MlpParams(dims, weights, biases)


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.layer_dims[0]:
        raise InvalidArgumentError(
            f"input must be (N, {params.layer_dims[0]}), got {x.shape}")
    return x


def _forward_cache(params, x):
    acts = [x]
    h = x
    last = params.n_layers - 1
    for ell, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W.T + b
        if ell < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def forward(params: MlpParams, x) -> np.ndarray:
    """Logits ``(N, dims[-1])``: ReLU on hidden layers, identity on the output."""
    return _forward_cache(params, _check_input(params, x))[-1]


def backward(params: MlpParams, x, dL_dlogits) -> GradientBundle:
    """Reverse-mode gradients averaged over rows.

    ``dL_dlogits[i]`` is the gradient of sample ``i``'s own loss; the bundle
    holds the gradient of the batch-mean loss. ReLU'(0) is taken as 0.
    """
    x = _check_input(params, x)
    g = np.asarray(dL_dlogits, dtype=np.float64)
    if g.shape != (x.shape[0], params.layer_dims[-1]):
        raise InvalidArgumentError(
            f"upstream gradient must be {(x.shape[0], params.layer_dims[-1])}, got {g.shape}")
    n = max(x.shape[0], 1)
    acts = _forward_cache(params, x)
    gW = [None] * params.n_layers
    gb = [None] * params.n_layers
    g = g / n
    for ell in range(params.n_layers - 1, -1, -1):
        gW[ell] = g.T @ acts[ell]
        gb[ell] = g.sum(axis=0)
        if ell > 0:
            g = (g @ params.weights[ell]) * (acts[ell] > 0.0)
    return GradientBundle(gW, gb)


def cosine_lr(state: OptimizerState) -> float:
    if not 0 <= state.epoch < state.total_epochs:
        raise InvalidArgumentError(
            f"epoch {state.epoch} outside [0, {state.total_epochs})")
    return state.lr_base * 0.5 * (1.0 + math.cos(math.pi * state.epoch / state.total_epochs))


def sgd_step(params: MlpParams, state: OptimizerState, grads: GradientBundle):
    """buf <- mu*buf + g + wd*p ; p <- p - lr(epoch)*buf. Updates in place and returns both."""
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if state.momentum_buffers is None:
        state.momentum_buffers = [np.zeros_like(a) for a in p_arrays]
    if len(g_arrays) != len(p_arrays) or any(
            g.shape != p.shape for g, p in zip(g_arrays, p_arrays)):
        raise InvalidArgumentError("gradient shapes do not match parameters")
    if any(b.shape != p.shape for b, p in zip(state.momentum_buffers, p_arrays)):
        raise InvalidArgumentError("momentum buffer shapes do not match parameters")
    lr = cosine_lr(state)
    for p, g, buf in zip(p_arrays, g_arrays, state.momentum_buffers):
        buf *= state.momentum
        buf += g + state.weight_decay * p
        p -= lr * buf
    return params, state


def params_to_dict(params: MlpParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "layer_dims": list(params.layer_dims),
        "weights": [W.ravel().tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_dict(d: dict) -> MlpParams:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgumentError(f"unsupported checkpoint format {d.get('format')!r}")
    dims = d["layer_dims"]
    weights = [np.array(w, dtype=np.float64).reshape(dims[i + 1], dims[i])
               for i, w in enumerate(d["weights"])]
    biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
    return MlpParams(dims, weights, biases)


def save_checkpoint(params: MlpParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params), fh)
        fh.write("\n")


def load_checkpoint(path) -> MlpParams:
    with open(path, encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))
