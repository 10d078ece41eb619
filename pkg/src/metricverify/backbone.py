"""Small fully connected embedding network trained with the angular-margin softmax."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DimensionError
from .losses import ClassHead, a_softmax_loss
from .sampling import combine_flipped
from .tensor import Linear, ReLU, RngStream, Sequential, as_tensor

FLIPS = ("reverse", "identity")


@dataclass
class BackboneConfig:
    input_dim: int
    n_classes: int
    hidden_widths: tuple[int, ...] = (64,)
    bottleneck: int = 16
    margin_m: int = 2
    flip: str = "reverse"

    def __post_init__(self):
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)
        if self.bottleneck < 2:
            raise ConfigurationError(f"bottleneck must be >= 2, got {self.bottleneck}")
        if self.n_classes < 2:
            raise ConfigurationError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.input_dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise ConfigurationError("layer widths must be positive")
        if int(self.margin_m) != self.margin_m or self.margin_m < 1:
            raise ConfigurationError(f"margin_m must be an integer >= 1, got {self.margin_m}")
        if self.flip not in FLIPS:
            raise ConfigurationError(f"flip must be one of {FLIPS}, got {self.flip!r}")


def flip_input(x, flip: str = "reverse") -> np.ndarray:
    """Desk-scale stand-in for image mirroring: reverse the input coordinates."""
    x = as_tensor(x)
    if flip == "identity":
        return x
    if flip == "reverse":
        return np.ascontiguousarray(x[..., ::-1])
    raise ConfigurationError(f"unknown flip {flip!r}")


class Backbone:
    """Embedding network ``input -> hidden(s) -> bottleneck`` plus its class head."""

    def __init__(self, config: BackboneConfig, net: Sequential, head: ClassHead, classes=None):
        self.config = config
        self.net = net
        self.head = head
        self.classes = (np.arange(config.n_classes) if classes is None
                        else np.asarray(classes, dtype=np.int64))

    @classmethod
    def init(cls, config: BackboneConfig, rng: RngStream, classes=None) -> "Backbone":
        layers = []
        width = config.input_dim
        for h in config.hidden_widths:
            layers += [Linear.init(width, h, rng), ReLU()]
            width = h
        layers.append(Linear.init(width, config.bottleneck, rng))
        head = ClassHead.init(config.n_classes, config.bottleneck, rng)
        return cls(config, Sequential(layers), head, classes)

    @property
    def feature_dim(self) -> int:
        return 2 * self.config.bottleneck

    def copy(self) -> "Backbone":
        return copy.deepcopy(self)

    def parameter_arrays(self) -> list[np.ndarray]:
        return [v for _, _, _, v in self.net.named_params()] + [self.head.weights]

    def bottleneck(self, x) -> np.ndarray:
        x = as_tensor(x)
        single = x.ndim == 1
        x2 = x[None] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.config.input_dim:
            raise DimensionError(
                f"backbone expects inputs of length {self.config.input_dim}, got shape {x.shape}"
            )
        out = self.net.forward(x2)
        return out[0] if single else out

    def class_index(self, identity_ids) -> np.ndarray:
        lookup = {int(k): i for i, k in enumerate(self.classes)}
        return np.array([lookup[int(k)] for k in identity_ids], dtype=np.int64)

    def class_step_grads(self, x, labels):
        """A-Softmax loss on a class batch; fills net grads and returns ``(loss, grad_head)``."""
        feats = self.net.forward(x, training=True)
        loss, g_feat, g_head = a_softmax_loss(feats, self.head, labels, self.config.margin_m)
        self.net.backward(g_feat)
        return loss, g_head


def extract_feature(backbone: Backbone, sample, flip: str | None = None) -> np.ndarray:
    """Bottleneck feature of the input concatenated with that of its flipped input."""
    flip = backbone.config.flip if flip is None else flip
    return combine_flipped(backbone.bottleneck(sample), backbone.bottleneck(flip_input(sample, flip)))


def extract_dataset(backbone: Backbone, ds, flip: str | None = None):
    """Map every sample of an :class:`IdentityDataset` to its combined feature."""
    return ds.map(lambda block: extract_feature(backbone, block, flip))
