"""Dense layers with explicit forward/backward passes.

Tensors are plain float64 ``numpy.ndarray`` objects (C-contiguous, row-major).
Each layer caches what its backward pass needs on the most recent ``forward``
call, so a layer instance must be backpropagated before it is reused.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import ConfigurationError, DimensionError, NumericError

STREAM_IDS = {"init": 0, "dropout": 1, "sampler": 2, "data": 3}


class RngStream:
    """Seeded random stream tagged with a purpose label.

    The same ``(seed, stream)`` pair always yields the same sequence; distinct
    labels give statistically independent sequences.
    """

    def __init__(self, seed: int, stream: str = "data"):
        self.seed = int(seed)
        self.stream = stream
        self.gen = np.random.Generator(np.random.PCG64(self._seed_sequence()))

    def _seed_sequence(self) -> np.random.SeedSequence:
        code = STREAM_IDS.get(self.stream)
        if code is None:
            code = 1000 + zlib.crc32(self.stream.encode())
        return np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, code])

    def fresh(self) -> "RngStream":
        return RngStream(self.seed, self.stream)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream!r})"


def as_tensor(x, ndim: int | None = None, name: str = "x") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    return arr


def xavier_uniform(fan_in: int, fan_out: int, shape, rng: RngStream) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.gen.uniform(-bound, bound, size=shape)


@dataclass
class LinearParams:
    weights: np.ndarray  # (In, Out)
    bias: np.ndarray  # (Out,)

    def __post_init__(self):
        self.weights = as_tensor(self.weights, 2, "weights")
        self.bias = as_tensor(self.bias, 1, "bias")
        if self.bias.shape[0] != self.weights.shape[1]:
            raise DimensionError(
                f"bias {self.bias.shape} does not match weights {self.weights.shape}"
            )


@dataclass
class Conv1x1Params:
    kernels: np.ndarray  # (K, C_in)
    bias: np.ndarray  # (K,)

    def __post_init__(self):
        self.kernels = as_tensor(self.kernels, 2, "kernels")
        self.bias = as_tensor(self.bias, 1, "bias")
        if self.bias.shape[0] != self.kernels.shape[0]:
            raise DimensionError(
                f"bias {self.bias.shape} does not match kernels {self.kernels.shape}"
            )


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9

    @classmethod
    def init(cls, n_features: int, epsilon: float = 1e-5, momentum: float = 0.9):
        return cls(
            np.ones(n_features),
            np.zeros(n_features),
            np.zeros(n_features),
            np.ones(n_features),
            epsilon,
            momentum,
        )

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.momentum < 1:
            raise ConfigurationError(f"momentum must be in (0, 1), got {self.momentum}")
        for name in ("gamma", "beta", "running_mean", "running_var"):
            setattr(self, name, as_tensor(getattr(self, name), 1, name))
        if np.any(self.running_var < 0):
            raise ConfigurationError("running_var must be non-negative")


class Layer:
    """Base class: ``forward`` caches inputs, ``backward`` fills ``grads``."""

    def __init__(self):
        self.grads: dict[str, np.ndarray] = {}

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Linear(Layer):
    def __init__(self, p: LinearParams):
        super().__init__()
        self.p = p
        self._x = None

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: RngStream) -> "Linear":
        w = xavier_uniform(n_in, n_out, (n_in, n_out), rng)
        return cls(LinearParams(w, np.zeros(n_out)))

    def params(self):
        return {"weights": self.p.weights, "bias": self.p.bias}

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.p.weights.shape[0]:
            raise DimensionError(
                f"linear input {x.shape} incompatible with weights {self.p.weights.shape}"
            )
        self._x = x
        return x @ self.p.weights + self.p.bias

    def backward(self, grad_out):
        self.grads = {
            "weights": self._x.T @ grad_out,
            "bias": grad_out.sum(axis=0),
        }
        return grad_out @ self.p.weights.T


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out):
        return np.where(self._mask, grad_out, 0.0)


class Conv1x1(Layer):
    """Channel mixing over a ``(B, C, D)`` input; no spatial mixing."""

    def __init__(self, p: Conv1x1Params):
        super().__init__()
        self.p = p

    @classmethod
    def init(cls, n_in: int, n_kernels: int, rng: RngStream) -> "Conv1x1":
        k = xavier_uniform(n_in, n_kernels, (n_kernels, n_in), rng)
        return cls(Conv1x1Params(k, np.zeros(n_kernels)))

    def params(self):
        return {"kernels": self.p.kernels, "bias": self.p.bias}

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[1] != self.p.kernels.shape[1]:
            raise DimensionError(
                f"conv1x1 input {x.shape} incompatible with kernels {self.p.kernels.shape}"
            )
        self._x = x
        out = np.einsum("kc,bcd->bkd", self.p.kernels, x)
        return out + self.p.bias[None, :, None]

    def backward(self, grad_out):
        self.grads = {
            "kernels": np.einsum("bkd,bcd->kc", grad_out, self._x),
            "bias": grad_out.sum(axis=(0, 2)),
        }
        return np.einsum("kc,bkd->bcd", self.p.kernels, grad_out)


class Dropout(Layer):
    """Inverted dropout; the identity outside training."""

    def __init__(self, rate: float, rng: RngStream | None = None):
        super().__init__()
        if not 0 <= rate < 1:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)
        self.rng = rng
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.rate == 0:
            self._mask = None
            return x
        if self.rng is None:
            raise ConfigurationError("dropout in training mode needs an RngStream")
        keep = self.rng.gen.random(x.shape) >= self.rate
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask


class BatchNorm(Layer):
    """Batch normalization over the feature axis of a ``(B, F)`` input."""

    def __init__(self, p: BatchNormParams):
        super().__init__()
        self.p = p

    def params(self):
        return {"gamma": self.p.gamma, "beta": self.p.beta}

    def forward(self, x, training=False):
        p = self.p
        if x.ndim != 2 or x.shape[1] != p.gamma.shape[0]:
            raise DimensionError(
                f"batchnorm input {x.shape} incompatible with {p.gamma.shape[0]} features"
            )
        if training:
            if x.shape[0] < 2:
                raise DimensionError(
                    f"batchnorm training needs batch size >= 2, got {x.shape[0]}"
                )
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            p.running_mean *= p.momentum
            p.running_mean += (1 - p.momentum) * mean
            p.running_var *= p.momentum
            p.running_var += (1 - p.momentum) * var
        else:
            mean, var = p.running_mean, p.running_var
        inv_std = 1.0 / np.sqrt(var + p.epsilon)
        x_hat = (x - mean) * inv_std
        self._cache = (x_hat, inv_std, training)
        return p.gamma * x_hat + p.beta

    def backward(self, grad_out):
        x_hat, inv_std, training = self._cache
        self.grads = {
            "gamma": (grad_out * x_hat).sum(axis=0),
            "beta": grad_out.sum(axis=0),
        }
        g = grad_out * self.p.gamma
        if not training:
            return g * inv_std
        n = g.shape[0]
        return inv_std / n * (n * g - g.sum(axis=0) - x_hat * (g * x_hat).sum(axis=0))


def linear(x, p: LinearParams) -> np.ndarray:
    return Linear(p).forward(as_tensor(x, 2))


def linear_backward(x, p: LinearParams, grad_out):
    """Return ``(dx, dweights, dbias)`` for ``linear(x, p)``."""
    layer = Linear(p)
    layer.forward(as_tensor(x, 2))
    dx = layer.backward(as_tensor(grad_out, 2))
    return dx, layer.grads["weights"], layer.grads["bias"]


def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x, grad_out) -> np.ndarray:
    return np.where(as_tensor(x) > 0, grad_out, 0.0)


def conv1x1(x, p: Conv1x1Params) -> np.ndarray:
    return Conv1x1(p).forward(as_tensor(x, 3))


def softmax_probs(logits) -> np.ndarray:
    z = as_tensor(logits)
    if z.ndim == 1:
        z = z[None, :]
    if z.shape[-1] < 1:
        raise DimensionError("softmax needs at least one class")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def finite_difference_check(
    fn: Callable[[np.ndarray], float],
    point,
    analytic_grad,
    eps: float = 1e-3,
) -> float:
    """Max relative error between ``analytic_grad`` and central differences of ``fn``.

    The relative error of each coordinate is
    ``|numeric - analytic| / max(|numeric|, |analytic|, 1e-8)``.
    """
    if eps <= 0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    x = as_tensor(point).copy()
    analytic = as_tensor(analytic_grad)
    if analytic.shape != x.shape:
        raise DimensionError(f"gradient shape {analytic.shape} != point shape {x.shape}")
    flat = x.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(fn(x))
        flat[i] = orig - eps
        f_minus = float(fn(x))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        numeric[i] = (f_plus - f_minus) / (2 * eps)
    a = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(numeric), np.abs(a)), 1e-8)
    return float(np.max(np.abs(numeric - a) / denom)) if flat.size else 0.0


@dataclass
class Sequential:
    """Ordered layer stack with joint forward/backward and parameter access."""

    layers: list[Layer] = field(default_factory=list)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params().items():
                yield f"{i}.{name}", layer, name, value

    def sgd_step(self, lr: float):
        for _, layer, name, value in self.named_params():
            value -= lr * layer.grads[name]
