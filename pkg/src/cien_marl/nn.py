"""Dense feed-forward networks with hand-written backprop and Adam.

Everything learnable in the package (actors, critics, influence estimators
and their targets) is a :class:`DenseNetwork`. Inputs are batched row-wise:
a ``(batch, in_dim)`` array maps to a ``(batch, out_dim)`` array; a 1-D input
is treated as a batch of one and returned 1-D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_HEADS = ("linear", "tanh", "gaussian")

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class DenseNetwork:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_head: str = "linear"
    log_std_min: float = LOG_STD_MIN
    log_std_max: float = LOG_STD_MAX

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ShapeError(f"invalid layer sizes {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_head not in OUTPUT_HEADS:
            raise ValueError(f"unknown output head {self.output_head!r}")
        if self.output_head == "gaussian" and self.layer_sizes[-1] % 2:
            raise ShapeError("gaussian head needs an even output width (mean, log_std)")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != expect or b.shape != (expect[0],):
                raise ShapeError(
                    f"layer {i}: weight {w.shape} / bias {b.shape}, expected {expect} / ({expect[0]},)"
                )
        if len(self.weights) != len(self.layer_sizes) - 1:
            raise ShapeError("number of weight matrices does not match layer_sizes")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            self.output_head,
            self.log_std_min,
            self.log_std_max,
        )

    def architecture(self) -> tuple:
        return (tuple(self.layer_sizes), self.hidden_activation, self.output_head)

    def flat_params(self) -> np.ndarray:
        """Parameters in row-major layer order: W0, b0, W1, b1, ..."""
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=self.dtype)
        if flat.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {flat.size}")
        k = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = flat[k:k + w.size].reshape(w.shape)
            k += w.size
            b[...] = flat[k:k + b.size]
            k += b.size


def init_network(
    layer_sizes: Sequence[int],
    rng: np.random.Generator | None = None,
    hidden_activation: str = "relu",
    output_head: str = "linear",
    dtype=np.float64,
    zero: bool = False,
) -> DenseNetwork:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; ``zero=True`` gives an all-zero net."""
    sizes = [int(n) for n in layer_sizes]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if zero:
            weights.append(np.zeros((fan_out, fan_in), dtype=dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
            continue
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
        biases.append(rng.uniform(-bound, bound, size=fan_out).astype(dtype))
    return DenseNetwork(sizes, weights, biases, hidden_activation, output_head)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to every affine layer
    pre: list[np.ndarray]  # pre-activation of every layer
    output: np.ndarray
    squeeze: bool


@dataclass
class GradientBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: DenseNetwork) -> "GradientBundle":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        return GradientBundle(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def scaled(self, c: float) -> "GradientBundle":
        return GradientBundle([c * w for w in self.weights], [c * b for b in self.biases])


def _hidden(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def forward(net: DenseNetwork, x) -> tuple[np.ndarray, ForwardCache]:
    """Run the network; returns ``(output, cache)``.

    For a gaussian head the output is ``[mean, clamped log_std]`` along the last axis.
    """
    x = np.asarray(x, dtype=net.dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {x.shape[-1] if x.ndim else ()} does not match in_dim {net.in_dim}")
    inputs, pre = [], []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        if i < last:
            h = _hidden(z, net.hidden_activation)
        elif net.output_head == "tanh":
            h = np.tanh(z)
        elif net.output_head == "gaussian":
            k = z.shape[1] // 2
            h = np.concatenate([z[:, :k], np.clip(z[:, k:], net.log_std_min, net.log_std_max)], axis=1)
        else:
            h = z
    out = h[0] if squeeze else h
    return out, ForwardCache(inputs, pre, h, squeeze)


def predict(net: DenseNetwork, x) -> np.ndarray:
    return forward(net, x)[0]


def backward(
    net: DenseNetwork, cache: ForwardCache | None, upstream, input_only: bool = False
) -> tuple[GradientBundle | None, np.ndarray]:
    """Backpropagate ``upstream = d(objective)/d(output)``.

    Returns the parameter gradients and the gradient w.r.t. the network input.
    Gradients are sums over the batch; scale ``upstream`` to get means.
    With ``input_only`` the parameter gradients are skipped and ``None`` is returned in their place.
    """
    if cache is None:
        raise RuntimeError("backward called without a cached forward pass")
    g = np.asarray(upstream, dtype=net.dtype)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise ShapeError(f"upstream gradient shape {g.shape} != output shape {cache.output.shape}")
    last = len(net.weights) - 1
    z = cache.pre[last]
    if net.output_head == "tanh":
        g = g * (1.0 - cache.output ** 2)
    elif net.output_head == "gaussian":
        k = z.shape[1] // 2
        ls = z[:, k:]
        inside = (ls >= net.log_std_min) & (ls <= net.log_std_max)
        g = np.concatenate([g[:, :k], g[:, k:] * inside], axis=1)
    gw = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for i in range(last, -1, -1):
        if not input_only:
            gw[i] = g.T @ cache.inputs[i]
            gb[i] = g.sum(axis=0)
        g = g @ net.weights[i]
        if i > 0:
            zp = cache.pre[i - 1]
            if net.hidden_activation == "relu":
                g = g * (zp > 0.0)
            else:
                g = g * (1.0 - cache.inputs[i] ** 2)
    grad_in = g[0] if cache.squeeze else g
    return (None if input_only else GradientBundle(gw, gb)), grad_in


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_network(cls, net: DenseNetwork, learning_rate: float = 3e-4, **kw) -> "AdamState":
        params = [a for pair in zip(net.weights, net.biases) for a in pair]
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            learning_rate=learning_rate,
            **kw,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            [m.copy() for m in self.first_moment],
            [v.copy() for v in self.second_moment],
            self.step_count,
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.epsilon,
        )


def adam_step(net: DenseNetwork, grads: GradientBundle, opt: AdamState) -> None:
    """Bias-corrected Adam update, in place on ``net`` and ``opt``."""
    if len(grads.weights) != len(net.weights):
        raise ShapeError("gradient bundle does not match network depth")
    for i, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if gw.shape != net.weights[i].shape or gb.shape != net.biases[i].shape:
            raise ShapeError(f"layer {i}: gradient shapes do not match parameters")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NonFiniteError(f"non-finite gradient in layer {i}")
    opt.step_count += 1
    t = opt.step_count
    b1, b2 = opt.beta1, opt.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    step = opt.learning_rate * math.sqrt(corr2) / corr1
    eps_hat = opt.epsilon * math.sqrt(corr2)
    params = [a for pair in zip(net.weights, net.biases) for a in pair]
    flat_grads = [a for pair in zip(grads.weights, grads.biases) for a in pair]
    for p, g, m, v in zip(params, flat_grads, opt.first_moment, opt.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        # equals lr * m_hat / (sqrt(v_hat) + eps)
        p -= step * m / (np.sqrt(v) + eps_hat)


def soft_update(target: DenseNetwork, online: DenseNetwork, tau: float) -> None:
    """Polyak averaging ``target <- tau * online + (1 - tau) * target`` in place."""
    if target.architecture() != online.architecture():
        raise ShapeError(f"architecture mismatch: {target.architecture()} vs {online.architecture()}")
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    for tp, op in zip(target.weights + target.biases, online.weights + online.biases):
        if tau == 1.0:
            tp[...] = op
        else:
            tp *= 1.0 - tau
            tp += tau * op


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Worst element-wise ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` is scaled by the largest gradient magnitude, so entries many
    orders below the gradient's scale are compared in absolute terms.
    """
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)), 1e-300)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float(np.max(np.abs(a - n) / denom, initial=0.0))


def numerical_gradient(net: DenseNetwork, objective: Callable[[], float], eps: float = 1e-5,
                       order: int = 2) -> np.ndarray:
    """Central differences of ``objective()`` over every parameter of ``net``.

    ``objective`` must read ``net``'s parameters when called; they are perturbed
    in place and restored afterwards. ``order=4`` uses the five-point stencil,
    which tolerates a larger ``eps`` and so loses less to roundoff.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    offsets = (1.0, -1.0) if order == 2 else (2.0, 1.0, -1.0, -2.0)
    coeffs = (0.5, -0.5) if order == 2 else (-1 / 12, 8 / 12, -8 / 12, 1 / 12)
    flat = net.flat_params()
    out = np.empty_like(flat)
    for j in range(flat.size):
        orig = flat[j]
        acc = 0.0
        for k, c in zip(offsets, coeffs):
            flat[j] = orig + k * eps
            net.set_flat_params(flat)
            acc += c * objective()
        flat[j] = orig
        out[j] = acc / eps
    net.set_flat_params(flat)
    return out


def _sum_head(out):
    return float(np.sum(out)), np.ones_like(out)


def finite_diff_check(
    net: DenseNetwork,
    x,
    scalar_head: Callable[[np.ndarray], tuple[float, np.ndarray]] = _sum_head,
    eps: float = 1e-5,
) -> float:
    """Max relative error between :func:`backward` and central differences.

    ``scalar_head(output)`` returns ``(value, d value / d output)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    out, cache = forward(net, x)
    _, upstream = scalar_head(out)
    analytic = backward(net, cache, upstream)[0].flat()
    numeric = numerical_gradient(net, lambda: scalar_head(forward(net, x)[0])[0], eps)
    return relative_error(analytic, numeric)
