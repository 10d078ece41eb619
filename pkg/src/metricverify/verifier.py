"""Two-channel verification classifier.

The two features of a pair are stacked as the channels of a ``(2, D)`` input.
A 1x1 convolution (or a fully connected layer over the concatenated pair)
fuses them, a stack of fully connected layers follows, and a 2-output
decision layer emits ``(p_match, p_nonmatch)``.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigurationError, DimensionError, NumericError
from .losses import LossConfig, focal_alpha_t, focal_loss, softmax_cross_entropy
from .tensor import (
    BatchNorm,
    BatchNormParams,
    Conv1x1,
    Dropout,
    Layer,
    Linear,
    ReLU,
    RngStream,
    Sequential,
    as_tensor,
    softmax_probs,
)

FIRST_LAYERS = ("conv1x1", "fully_connected")
REGULARIZERS = ("dropout", "batchnorm")
MATCH, NONMATCH = 0, 1


@dataclass
class VerifierConfig:
    input_dim: int
    depth: int = 7
    first_layer: str = "conv1x1"
    kernel_count: int = 128
    hidden_width: int = 1024
    regularizer: str = "dropout"
    dropout_rate: float = 0.5
    pair_swap: bool = False

    def __post_init__(self):
        checks = [
            ("input_dim", self.input_dim >= 1),
            ("depth", self.depth >= 2),
            ("first_layer", self.first_layer in FIRST_LAYERS),
            ("kernel_count", self.kernel_count >= 1),
            ("hidden_width", self.hidden_width >= 1),
            ("regularizer", self.regularizer in REGULARIZERS),
            ("dropout_rate", 0 <= self.dropout_rate < 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigurationError(f"invalid verifier {name}: {getattr(self, name)!r}")

    def to_dict(self):
        return asdict(self)


class Flatten(Layer):
    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)


class VerifierModel:
    """A built verifier: its config plus the ordered layer stack."""

    def __init__(self, config: VerifierConfig, net: Sequential, dropout_rng: RngStream | None = None):
        self.config = config
        self.net = net
        self.dropout_rng = dropout_rng or RngStream(0, "dropout")

    @property
    def layers(self):
        return self.net.layers

    def parameter_arrays(self) -> list[np.ndarray]:
        """Every parameter and running statistic, in layer order."""
        out = []
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                p = layer.p
                out += [p.gamma, p.beta, p.running_mean, p.running_var]
            else:
                out += list(layer.params().values())
        return out

    def copy(self) -> "VerifierModel":
        return copy.deepcopy(self)

    def _set_dropout_rng(self, rng):
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def logits(self, x, training=False):
        return self.net.forward(x, training)


def _regularizer(cfg: VerifierConfig, width: int):
    if cfg.regularizer == "batchnorm":
        return BatchNorm(BatchNormParams.init(width))
    return Dropout(cfg.dropout_rate)


def build_verifier(config: VerifierConfig, rng: RngStream) -> VerifierModel:
    """Xavier-uniform weights from ``rng``; zero biases."""
    cfg = config
    layers: list[Layer] = []
    if cfg.first_layer == "conv1x1":
        layers += [Conv1x1.init(2, cfg.kernel_count, rng), ReLU(), Flatten()]
        width = cfg.kernel_count * cfg.input_dim
        layers.append(_regularizer(cfg, width))
        n_hidden = cfg.depth - 2
    else:
        layers.append(Flatten())
        width = 2 * cfg.input_dim
        n_hidden = cfg.depth - 1
    for _ in range(n_hidden):
        layers += [Linear.init(width, cfg.hidden_width, rng), ReLU()]
        width = cfg.hidden_width
        layers.append(_regularizer(cfg, width))
    layers.append(Linear.init(width, 2, rng))
    return VerifierModel(cfg, Sequential(layers), RngStream(rng.seed, "dropout"))


def stack_pair(a, b) -> np.ndarray:
    """``(2, D)`` paired feature: channel 0 is ``a``, channel 1 is ``b``."""
    a = as_tensor(a, 1, "a")
    b = as_tensor(b, 1, "b")
    if a.shape != b.shape:
        raise DimensionError(f"pair members differ in length: {a.shape[0]} vs {b.shape[0]}")
    return np.stack([a, b])


def _as_pair_batch(model: VerifierModel, pair) -> tuple[np.ndarray, bool]:
    x = as_tensor(pair)
    single = x.ndim == 2
    if single:
        x = x[None]
    d = model.config.input_dim
    if x.ndim != 3 or x.shape[1:] != (2, d):
        raise DimensionError(f"verifier expects pairs of shape (2, {d}), got {as_tensor(pair).shape}")
    return x, single


def verify_forward(model: VerifierModel, pair, training: bool = False, rng: RngStream | None = None):
    """Match probabilities for one ``(2, D)`` pair or an ``(N, 2, D)`` batch.

    Returns ``(p_match, p_nonmatch)`` for a single pair, else an ``(N, 2)`` array.
    """
    x, single = _as_pair_batch(model, pair)
    model._set_dropout_rng(rng or model.dropout_rng)
    probs = softmax_probs(model.logits(x, training))
    if single:
        return float(probs[0, MATCH]), float(probs[0, NONMATCH])
    return probs


def verify_decision(probs):
    """Match iff ``p_match > p_nonmatch``; exact ties are non-matches."""
    p = np.asarray(probs, dtype=np.float64)
    decided = p[..., MATCH] > p[..., NONMATCH]
    return bool(decided) if decided.ndim == 0 else decided


def pair_loss(logits, same, loss: LossConfig):
    """Verification loss over 2-way logits and its gradient w.r.t. the logits."""
    same = np.asarray(same, dtype=bool)
    target = np.where(same, MATCH, NONMATCH)
    if loss.kind == "softmax":
        return softmax_cross_entropy(logits, target)
    if loss.kind != "focal":
        raise ConfigurationError(f"verifier training supports softmax or focal, not {loss.kind!r}")
    probs = softmax_probs(logits)
    rows = np.arange(len(target))
    p_t = probs[rows, target]
    value, d_pt = focal_loss(p_t, focal_alpha_t(loss.alpha, same), loss.gamma)
    onehot = np.zeros_like(probs)
    onehot[rows, target] = 1.0
    return value, (d_pt * p_t)[:, None] * (onehot - probs)


def verifier_backward(model: VerifierModel, pairs, same, loss: LossConfig, rng=None, training=True):
    """Forward + backward on a pair batch; fills layer grads and returns ``(loss, d_input)``."""
    x = as_tensor(pairs, 3, "pairs")
    same = np.asarray(same, dtype=bool)
    if model.config.pair_swap:
        x = np.concatenate([x, x[:, ::-1]])
        same = np.concatenate([same, same])
    model._set_dropout_rng(rng or model.dropout_rng)
    logits = model.logits(x, training)
    value, grad = pair_loss(logits, same, loss)
    if not np.isfinite(value):
        raise NumericError(f"non-finite verifier loss {value}")
    dx = model.net.backward(grad)
    if model.config.pair_swap:
        half = dx.shape[0] // 2
        dx = dx[:half] + dx[half:, ::-1]
    return value, dx


def verifier_train_step(model: VerifierModel, batch, loss: LossConfig, lr: float, rng=None) -> float:
    """One SGD step on the mean batch loss, in place. Returns the pre-step loss."""
    if not lr >= 0:
        raise ConfigurationError(f"learning rate must be non-negative, got {lr}")
    if len(batch) == 0:
        raise ConfigurationError("empty pair batch")
    pairs = np.stack([batch.a, batch.b], axis=1)
    value, _ = verifier_backward(model, pairs, batch.same, loss, rng)
    for g in (lyr.grads[n] for lyr in model.layers for n in lyr.params()):
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite verifier gradient")
    model.net.sgd_step(lr)
    return value
