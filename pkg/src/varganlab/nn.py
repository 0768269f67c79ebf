"""Dense feed-forward networks with exact reverse-mode gradients and Adam.

Everything is float64 and numpy based. A :class:`Net` is a plain list of
:class:`DenseLayer` objects; :func:`forward` returns the output together with
a :class:`ForwardCache` that :func:`backward` consumes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("leaky_relu", "sigmoid", "tanh", "identity")
LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


@dataclass
class DenseLayer:
    weights: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    activation: str = "leaky_relu"
    dropout: float = 0.0
    slope: float = LEAKY_SLOPE

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]


@dataclass
class Net:
    layers: list[DenseLayer]
    training: bool = True
    # bumped on every parameter update; caches remember the value they saw
    version: int = 0

    @property
    def fan_in(self) -> int:
        return self.layers[0].fan_in

    @property
    def fan_out(self) -> int:
        return self.layers[-1].fan_out

    @property
    def sizes(self) -> list[int]:
        return [self.fan_in] + [layer.fan_out for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def train(self) -> "Net":
        self.training = True
        return self

    def eval(self) -> "Net":
        self.training = False
        return self

    def copy(self) -> "Net":
        layers = [
            DenseLayer(l.weights.copy(), l.bias.copy(), l.activation, l.dropout, l.slope)
            for l in self.layers
        ]
        return Net(layers, self.training, self.version)


@dataclass
class ForwardCache:
    net: Net
    version: int
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    outputs: list[np.ndarray] = field(default_factory=list)  # post-activation, pre-dropout
    masks: list[np.ndarray | None] = field(default_factory=list)


def init_net(
    layer_sizes: Sequence[int],
    activations: Sequence[str],
    dropout: Sequence[float] | None = None,
    seed: int = 0,
    slope: float = LEAKY_SLOPE,
) -> Net:
    """Build a net from ``layer_sizes = [fan_in, h1, ..., out]``.

    ``activations`` and ``dropout`` have one entry per layer, i.e.
    ``len(layer_sizes) - 1`` entries. Weights are U(-sqrt(3/fan_in),
    sqrt(3/fan_in)), biases are zero.
    """
    n_layers = len(layer_sizes) - 1
    if dropout is None:
        dropout = [0.0] * n_layers
    if n_layers < 1 or len(activations) != n_layers or len(dropout) != n_layers:
        raise ValueError(
            f"need {len(layer_sizes) - 1} activations/dropout rates for sizes {list(layer_sizes)}, "
            f"got {len(activations)} and {len(dropout)}"
        )
    if any(int(s) <= 0 for s in layer_sizes):
        raise ValueError(f"layer sizes must be positive: {list(layer_sizes)}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act, rate in zip(layer_sizes[:-1], layer_sizes[1:], activations, dropout):
        if act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}")
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1): {rate}")
        limit = np.sqrt(3.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(int(fan_in), int(fan_out)))
        layers.append(DenseLayer(w, np.zeros(int(fan_out)), act, float(rate), slope))
    return Net(layers)


def _activate(z: np.ndarray, layer: DenseLayer) -> np.ndarray:
    act = layer.activation
    if act == "leaky_relu":
        return np.where(z > 0, z, layer.slope * z)
    if act == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if act == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(a: np.ndarray, grad: np.ndarray, layer: DenseLayer) -> np.ndarray:
    """Chain ``grad`` (w.r.t. the activation output ``a``) back to the pre-activation."""
    act = layer.activation
    if act == "leaky_relu":
        # sign of a equals the sign of the pre-activation for slope > 0
        return np.where(a > 0, grad, layer.slope * grad)
    if act == "sigmoid":
        return grad * a * (1.0 - a)
    if act == "tanh":
        return grad * (1.0 - a * a)
    return grad


def forward(
    net: Net, x: np.ndarray, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.fan_in:
        raise ShapeError(f"input shape {x.shape} does not match fan_in {net.fan_in}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    cache = ForwardCache(net, net.version)
    h = x
    for layer in net.layers:
        cache.inputs.append(h)
        a = _activate(h @ layer.weights + layer.bias, layer)
        cache.outputs.append(a)
        mask = None
        if net.training and layer.dropout > 0.0:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng")
            keep = 1.0 - layer.dropout
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        cache.masks.append(mask)
        h = a
    return h, cache


def predict(net: Net, x: np.ndarray) -> np.ndarray:
    """Evaluation-mode forward pass that leaves ``net.training`` untouched."""
    was = net.training
    net.training = False
    try:
        return forward(net, x)[0]
    finally:
        net.training = was


def backward(
    net: Net, cache: ForwardCache, output_grad: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Return ``([(dW, db), ...], d_input)`` for the cached forward pass."""
    if cache.net is not net or cache.version != net.version:
        raise StaleCacheError("cache was produced by a different net or before a parameter update")
    g = np.asarray(output_grad, dtype=np.float64)
    expected = cache.outputs[-1].shape
    if g.shape != expected:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {expected}")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)  # type: ignore[list-item]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        g = _activation_grad(cache.outputs[i], g, layer)
        grads[i] = (cache.inputs[i].T @ g, g.sum(axis=0))
        g = g @ layer.weights.T
    return grads, g


def zero_grads(net: Net) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in net.layers]


# -- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_net(cls, net: Net, lr: float = 2e-4, beta1: float = 0.9,
                beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            [np.zeros_like(p) for p in net.params()],
            [np.zeros_like(p) for p in net.params()],
            0, lr, beta1, beta2, epsilon,
        )


def adam_step(net: Net, grads: list[tuple[np.ndarray, np.ndarray]], state: AdamState) -> None:
    """Bias-corrected Adam update, in place on ``net`` and ``state``."""
    params = net.params()
    flat = [g for pair in grads for g in pair]
    if len(flat) != len(params) or len(state.first_moment) != len(params):
        raise ShapeError("gradient/state list does not match the net's parameters")
    for p, g, m in zip(params, flat, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v in zip(params, flat, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    net.version += 1


# -- finite-difference oracle ------------------------------------------------

# A scalar loss on the net output: returns (value, d value / d output).
LossFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def mean_loss(out: np.ndarray) -> tuple[float, np.ndarray]:
    return float(out.mean()), np.full_like(out, 1.0 / out.size)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    # the floor keeps central-difference rounding noise (~1e-11) on near-zero
    # gradients from reading as a relative failure
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def check_param_gradients(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    value: Callable[[], float],
    n_params: int = 100,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic ``grads`` and central differences
    of ``value()`` over a random subsample of the entries of ``params``.

    ``params`` are perturbed in place and restored.
    """
    sizes = np.array([p.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(int(offsets[-1]), size=min(n_params, int(offsets[-1])), replace=False)
    worst = 0.0
    for flat_idx in picks:
        k = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        local = np.unravel_index(int(flat_idx - offsets[k]), params[k].shape)
        p = params[k]
        orig = p[local]
        p[local] = orig + h
        up = value()
        p[local] = orig - h
        down = value()
        p[local] = orig
        numeric = (up - down) / (2 * h)
        worst = max(worst, float(relative_error(np.array(grads[k][local]), np.array(numeric))))
    return worst


def compare_gradients(
    net: Net,
    x: np.ndarray,
    loss: LossFn,
    grads: list[tuple[np.ndarray, np.ndarray]],
    n_params: int = 100,
    h: float = 1e-5,
    seed: int = 0,
    forward_seed: int = 12345,
) -> float:
    """:func:`check_param_gradients` for a single net under ``loss``.

    Dropout masks are held fixed by reseeding every forward.
    """
    def value() -> float:
        out, _ = forward(net, x, np.random.default_rng(forward_seed))
        return loss(out)[0]

    flat = [g for pair in grads for g in pair]
    return check_param_gradients(net.params(), flat, value, n_params, h, seed)


def grad_check(
    net: Net,
    x: np.ndarray,
    loss: LossFn = mean_loss,
    n_params: int = 100,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    forward_seed = seed + 12345
    out, cache = forward(net, x, np.random.default_rng(forward_seed))
    grads, _ = backward(net, cache, loss(out)[1])
    return compare_gradients(net, x, loss, grads, n_params, h, seed, forward_seed)


# -- serialization -----------------------------------------------------------


def net_to_dict(net: Net) -> dict:
    return {
        "layer_sizes": net.sizes,
        "activations": [l.activation for l in net.layers],
        "dropout": [l.dropout for l in net.layers],
        "slope": [l.slope for l in net.layers],
        "weights": [l.weights.ravel().tolist() for l in net.layers],
        "biases": [l.bias.tolist() for l in net.layers],
    }


def net_from_dict(d: dict) -> Net:
    sizes = d["layer_sizes"]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = np.asarray(d["weights"][i], dtype=np.float64)
        b = np.asarray(d["biases"][i], dtype=np.float64)
        if w.size != fan_in * fan_out or b.size != fan_out:
            raise ShapeError(f"layer {i}: stored arrays do not match sizes {fan_in}x{fan_out}")
        layers.append(DenseLayer(w.reshape(fan_in, fan_out), b, d["activations"][i],
                                 float(d["dropout"][i]), float(d["slope"][i])))
    return Net(layers)


def adam_to_dict(state: AdamState) -> dict:
    return {
        "step": state.step, "lr": state.lr, "beta1": state.beta1,
        "beta2": state.beta2, "epsilon": state.epsilon,
        "first_moment": [m.ravel().tolist() for m in state.first_moment],
        "second_moment": [v.ravel().tolist() for v in state.second_moment],
    }


def adam_from_dict(d: dict, net: Net) -> AdamState:
    shapes = [p.shape for p in net.params()]
    if len(d["first_moment"]) != len(shapes) or len(d["second_moment"]) != len(shapes):
        raise ShapeError("adam state does not match the net")
    m = [np.asarray(a, dtype=np.float64).reshape(s) for a, s in zip(d["first_moment"], shapes)]
    v = [np.asarray(a, dtype=np.float64).reshape(s) for a, s in zip(d["second_moment"], shapes)]
    return AdamState(m, v, int(d["step"]), d["lr"], d["beta1"], d["beta2"], d["epsilon"])
