"""Run settings addressable by dotted ``section.field`` keys.

Defaults are desk-scale: 50 identities x 20 samples in 32 dimensions, a
16-d bottleneck trained with margin 2, batches of 32 and 3000 SGD steps at
learning rate 0.05.
"""
from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields

from .backbone import BackboneConfig
from .exceptions import ConfigurationError
from .io import read_config
from .losses import LossConfig
from .sampling import MiningConfig
from .training import TrainConfig
from .verifier import VerifierConfig


@dataclass
class DataSettings:
    ids: int = 50
    per_id: int = 20
    dim: int = 32
    sigma: float = 0.3
    holdout: int = 5  # samples per identity reserved for evaluation pairs
    eval_pairs: int = 600


@dataclass
class BackboneSettings:
    hidden_widths: tuple[int, ...] = (64,)
    bottleneck: int = 16
    margin_m: int = 2
    flip: str = "reverse"


@dataclass
class VerifierSettings:
    depth: int = 7
    first_layer: str = "conv1x1"
    kernel_count: int = 32
    hidden_width: int = 64
    regularizer: str = "dropout"
    dropout_rate: float = 0.5
    pair_swap: bool = False


@dataclass
class TrainSettings:
    batch_size: int = 32
    lr: float = 0.05
    steps: int = 3000
    seed: int = 0
    joint_weight: float = 1.0


@dataclass
class LossSettings:
    kind: str = "softmax"
    gamma: float = 2.0
    alpha: float = 0.5


@dataclass
class MiningSettings:
    mode: str = "off"  # off | auto | fixed
    tau_neg: float = 1.0
    tau_pos: float = 1.0
    metric: str = "euclidean"


@dataclass
class EvalSettings:
    mode: str = "max_accuracy"


@dataclass
class Settings:
    data: DataSettings = field(default_factory=DataSettings)
    backbone: BackboneSettings = field(default_factory=BackboneSettings)
    verifier: VerifierSettings = field(default_factory=VerifierSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    loss: LossSettings = field(default_factory=LossSettings)
    mining: MiningSettings = field(default_factory=MiningSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    @classmethod
    def load(cls, path=None, overrides: dict[str, str] | None = None) -> "Settings":
        s = cls()
        values = dict(read_config(path)) if path else {}
        values.update(overrides or {})
        for key, value in values.items():
            s.set(key, value)
        return s

    def set(self, key: str, value):
        section, _, name = key.partition(".")
        if section == "verifier" and name == "kernels":
            name = "kernel_count"
        target = getattr(self, section, None) if not section.startswith("_") else None
        if target is None or not name or name not in {f.name for f in fields(target)}:
            raise ConfigurationError(f"unknown config key {key!r}")
        hint = typing.get_type_hints(type(target))[name]
        setattr(target, name, _coerce(key, value, hint) if isinstance(value, str) else value)

    def items(self):
        for f in fields(self):
            section = getattr(self, f.name)
            for g in fields(section):
                yield f"{f.name}.{g.name}", getattr(section, g.name)

    def to_text(self) -> str:
        def enc(v):
            return ",".join(map(str, v)) if isinstance(v, tuple) else str(v)

        return "".join(f"{k}={enc(v)}\n" for k, v in self.items())

    def backbone_config(self, input_dim: int, n_classes: int) -> BackboneConfig:
        b = self.backbone
        return BackboneConfig(input_dim, n_classes, b.hidden_widths, b.bottleneck, b.margin_m, b.flip)

    def verifier_config(self, input_dim: int) -> VerifierConfig:
        v = self.verifier
        return VerifierConfig(input_dim, v.depth, v.first_layer, v.kernel_count,
                              v.hidden_width, v.regularizer, v.dropout_rate, v.pair_swap)

    def train_config(self) -> TrainConfig:
        m = self.mining
        if m.mode == "off":
            mining = None
        elif m.mode == "auto":
            mining = "auto"
        elif m.mode == "fixed":
            mining = MiningConfig(m.tau_neg, m.tau_pos, m.metric)
        else:
            raise ConfigurationError(f"mining.mode must be off, auto or fixed, got {m.mode!r}")
        t = self.train
        loss = LossConfig(kind=self.loss.kind, margin_m=self.backbone.margin_m,
                          gamma=self.loss.gamma, alpha=self.loss.alpha)
        return TrainConfig(t.batch_size, t.lr, t.steps, loss, mining, t.joint_weight, t.seed)


def _coerce(key: str, raw: str, hint):
    raw = raw.strip()
    try:
        if hint is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if typing.get_origin(hint) is tuple:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from None


def parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigurationError(f"override must look like key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out
