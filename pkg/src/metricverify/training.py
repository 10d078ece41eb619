"""Seeded SGD loops: backbone, verifier, joint training and architecture sweeps."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .backbone import Backbone, BackboneConfig, flip_input
from .evaluation import EvalReport, classifier_eval, relative_error_reduction
from .exceptions import ConfigurationError, MetricVerifyError, NumericError, TrainingError
from .losses import LossConfig
from .sampling import (
    IdentityDataset,
    MiningConfig,
    PairBatch,
    default_mining_config,
    sample_balanced_batch,
    sample_mined_batch,
)
from .tensor import RngStream
from .verifier import VerifierConfig, VerifierModel, build_verifier, verifier_backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 0.05
    steps: int = 3000
    loss: LossConfig = field(default_factory=LossConfig)
    mining: MiningConfig | str | None = None  # "auto": median-distance thresholds
    joint_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigurationError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")
        if self.steps < 0:
            raise ConfigurationError(f"steps must be >= 0, got {self.steps}")
        if self.joint_weight < 0:
            raise ConfigurationError(f"joint_weight must be >= 0, got {self.joint_weight}")
        if isinstance(self.mining, str) and self.mining != "auto":
            raise ConfigurationError(f"mining must be a MiningConfig, 'auto' or None, got {self.mining!r}")


@dataclass
class TrainingCurve:
    loss: list[float] = field(default_factory=list)
    retention: list[float] = field(default_factory=list)
    mining: MiningConfig | None = None


def _snapshot(arrays):
    return [a.copy() for a in arrays]


def _all_finite(arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def _restore(arrays, saved):
    for a, s in zip(arrays, saved):
        a[...] = s


def _class_batch(n_samples: int, batch_size: int, rng: RngStream) -> np.ndarray:
    return rng.gen.choice(n_samples, size=batch_size, replace=n_samples < batch_size)


def _backbone_sgd(backbone: Backbone, net_grads, g_head, lr):
    for (_, _, _, value), g in zip(backbone.net.named_params(), net_grads):
        value -= lr * g
    backbone.head.weights -= lr * g_head
    backbone.head.renormalize()


def _net_grads(backbone: Backbone):
    return [layer.grads[name].copy() for _, layer, name, _ in backbone.net.named_params()]


def train_backbone(ds: IdentityDataset, cfg: BackboneConfig, tc: TrainConfig):
    """Fit the embedding network with A-Softmax against a unit-row class head.

    Returns the trained :class:`Backbone` and a :class:`TrainingCurve`. A
    non-finite loss raises :class:`TrainingError` whose ``last_good`` is the
    backbone before the offending update.
    """
    if cfg.n_classes != len(ds):
        raise ConfigurationError(f"n_classes={cfg.n_classes} but the dataset has {len(ds)} identities")
    if cfg.input_dim != ds.dim:
        raise ConfigurationError(f"input_dim={cfg.input_dim} but dataset features have length {ds.dim}")
    backbone = Backbone.init(cfg, RngStream(tc.seed, "init"), classes=ds.ids)
    X, ids = ds.to_arrays()
    y = backbone.class_index(ids)
    batches = RngStream(tc.seed, "sampler")
    curve = TrainingCurve()
    params = backbone.parameter_arrays()
    saved = _snapshot(params)
    for step in range(tc.steps):
        idx = _class_batch(len(X), tc.batch_size, batches)
        try:
            loss, g_head = backbone.class_step_grads(X[idx], y[idx])
        except MetricVerifyError as exc:
            _restore(params, saved)
            raise TrainingError(f"backbone step {step}: {exc}", last_good=backbone) from exc
        if not np.isfinite(loss):
            _restore(params, saved)
            raise TrainingError(f"non-finite backbone loss at step {step}", last_good=backbone)
        saved = _snapshot(params)
        _backbone_sgd(backbone, _net_grads(backbone), g_head, tc.lr)
        if not _all_finite(params):
            _restore(params, saved)
            raise TrainingError(f"non-finite backbone parameters after step {step}", last_good=backbone)
        curve.loss.append(loss)
    return backbone, curve


def _resolve_mining(tc: TrainConfig, ds: IdentityDataset):
    if tc.mining == "auto":
        return default_mining_config(ds, RngStream(tc.seed, "mining"))
    return tc.mining


def _pair_batch(ds, tc, mining, rng):
    if mining is None:
        return sample_balanced_batch(ds, tc.batch_size, rng), 1.0
    return sample_mined_batch(ds, tc.batch_size, mining, rng)


def train_verifier(features: IdentityDataset, vcfg: VerifierConfig, tc: TrainConfig):
    """Balanced (optionally mined) pair batches fed to SGD on the verifier."""
    if vcfg.input_dim != features.dim:
        raise ConfigurationError(
            f"verifier input_dim={vcfg.input_dim} but features have length {features.dim}"
        )
    model = build_verifier(vcfg, RngStream(tc.seed, "verifier-init"))
    model.dropout_rng = RngStream(tc.seed, "dropout")
    pairs_rng = RngStream(tc.seed, "pair-sampler")
    mining = _resolve_mining(tc, features)
    curve = TrainingCurve(mining=mining)
    params = model.parameter_arrays()
    saved = _snapshot(params)
    for step in range(tc.steps):
        batch, kept = _pair_batch(features, tc, mining, pairs_rng)
        try:
            loss, _ = verifier_backward(model, np.stack([batch.a, batch.b], axis=1),
                                        batch.same, tc.loss)
        except NumericError as exc:
            _restore(params, saved)
            raise TrainingError(f"step {step}: {exc}", last_good=model) from exc
        saved = _snapshot(params)
        model.net.sgd_step(tc.lr)
        curve.loss.append(loss)
        curve.retention.append(kept)
    return model, curve


def train_joint(ds: IdentityDataset, bcfg: BackboneConfig, vcfg: VerifierConfig, tc: TrainConfig):
    """End-to-end training of backbone and verifier.

    Each step draws one classification batch (A-Softmax loss) and one pair
    batch whose features are extracted by the current backbone. The backbone
    descends ``L_A + joint_weight * L_verify``; the verifier descends
    ``L_verify``. With ``joint_weight == 0`` the backbone follows exactly the
    trajectory of :func:`train_backbone` under the same seed.
    """
    if vcfg.input_dim != 2 * bcfg.bottleneck:
        raise ConfigurationError(
            f"verifier input_dim={vcfg.input_dim} must be twice the bottleneck {bcfg.bottleneck}"
        )
    if bcfg.n_classes != len(ds):
        raise ConfigurationError(f"n_classes={bcfg.n_classes} but the dataset has {len(ds)} identities")
    backbone = Backbone.init(bcfg, RngStream(tc.seed, "init"), classes=ds.ids)
    verifier = build_verifier(vcfg, RngStream(tc.seed, "verifier-init"))
    verifier.dropout_rng = RngStream(tc.seed, "dropout")
    X, ids = ds.to_arrays()
    y = backbone.class_index(ids)
    batches = RngStream(tc.seed, "sampler")
    pairs_rng = RngStream(tc.seed, "pair-sampler")
    mining = _resolve_mining(tc, ds)
    curve = TrainingCurve(mining=mining)
    b_params = backbone.parameter_arrays()
    v_params = verifier.parameter_arrays()
    saved = _snapshot(b_params), _snapshot(v_params)
    lam = tc.joint_weight
    for step in range(tc.steps):
        idx = _class_batch(len(X), tc.batch_size, batches)
        try:
            loss_a, g_head = backbone.class_step_grads(X[idx], y[idx])
        except MetricVerifyError:
            loss_a = float("nan")
        grads = _net_grads(backbone) if np.isfinite(loss_a) else None

        batch, kept = _pair_batch(ds, tc, mining, pairs_rng)
        n = len(batch)
        raw = np.concatenate([batch.a, batch.b])
        emb = backbone.net.forward(np.concatenate([raw, flip_input(raw, bcfg.flip)]), training=True)
        feat = np.concatenate([emb[: 2 * n], emb[2 * n:]], axis=1)  # (2n, 2B)
        pairs = np.stack([feat[:n], feat[n:]], axis=1)
        try:
            loss_v, d_pairs = verifier_backward(verifier, pairs, batch.same, tc.loss)
        except NumericError:
            loss_v = float("nan")
        total = loss_a + lam * loss_v
        if not (np.isfinite(total) and np.isfinite(loss_v)):
            _restore(b_params, saved[0])
            _restore(v_params, saved[1])
            raise TrainingError(f"non-finite joint loss at step {step}",
                                last_good=(backbone, verifier))
        saved = _snapshot(b_params), _snapshot(v_params)
        if lam:
            d_feat = np.concatenate([d_pairs[:, 0], d_pairs[:, 1]])  # (2n, 2B)
            bdim = bcfg.bottleneck
            backbone.net.backward(np.concatenate([d_feat[:, :bdim], d_feat[:, bdim:]]))
            grads = [g + lam * g_v for g, g_v in zip(grads, _net_grads(backbone))]
        _backbone_sgd(backbone, grads, g_head, tc.lr)
        verifier.net.sgd_step(tc.lr)
        if not (_all_finite(b_params) and _all_finite(v_params)):
            _restore(b_params, saved[0])
            _restore(v_params, saved[1])
            raise TrainingError(f"non-finite parameters after joint step {step}",
                                last_good=(backbone, verifier))
        curve.loss.append(float(total))
        curve.retention.append(kept)
    return backbone, verifier, curve


SWEEP_AXES = {
    "depth": [
        (f"{d} layers", dict(depth=d, first_layer="fully_connected", regularizer="dropout"))
        for d in (3, 5, 7, 9)
    ],
    "layer_kind": [
        ("7-FC", dict(depth=7, first_layer="fully_connected", regularizer="dropout")),
        ("7-FC+BN", dict(depth=7, first_layer="fully_connected", regularizer="batchnorm")),
        ("1-CONV+6-FC", dict(depth=7, first_layer="conv1x1", regularizer="dropout")),
    ],
    "kernels": [
        (f"{k} kernels", dict(depth=7, first_layer="conv1x1", kernel_count=k, regularizer="dropout"))
        for k in (64, 128, 256)
    ],
}


@dataclass
class SweepRow:
    variant: str
    error_rate: float | None
    reduction: float | None = None
    status: str = "ok"


@dataclass
class SweepTable:
    axis: str
    rows: list[SweepRow]

    def to_text(self) -> str:
        head = ("Variant", "Error rate (%)", "Relative error reduction (%)")
        body = []
        for i, r in enumerate(self.rows):
            if r.status != "ok":
                body.append((r.variant, "failed", r.status))
                continue
            err = f"{100 * r.error_rate:.2f}"
            if i == 0:
                red = "--"
            elif r.reduction is None:
                red = "n/a"
            else:
                red = f"{r.reduction:.2f}"
            body.append((r.variant, err, red))
        widths = [max(len(row[c]) for row in [head, *body]) for c in range(3)]
        fmt = lambda row: "  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip()
        return "\n".join([fmt(head), *map(fmt, body)]) + "\n"


def run_sweep(
    axis: str,
    base: VerifierConfig,
    tc: TrainConfig,
    features: IdentityDataset,
    eval_pairs: PairBatch,
) -> SweepTable:
    """Train each variant of ``axis`` with shared seeds and tabulate held-out error.

    The first row is the baseline of the relative-error-reduction column. A
    variant that fails to train is marked and the sweep continues.
    """
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"axis must be one of {sorted(SWEEP_AXES)}, got {axis!r}")
    rows = []
    for name, overrides in SWEEP_AXES[axis]:
        try:
            model, _ = train_verifier(features, replace(base, **overrides), tc)
            report: EvalReport = classifier_eval(model, eval_pairs)
            rows.append(SweepRow(name, report.error_rate))
        except MetricVerifyError as exc:
            log.warning("sweep variant %s failed: %s", name, exc)
            rows.append(SweepRow(name, None, status=f"failed: {exc}"))
    base_err = rows[0].error_rate
    for r in rows[1:]:
        if r.status == "ok" and base_err:
            r.reduction = relative_error_reduction(base_err, r.error_rate)
    return SweepTable(axis, rows)
