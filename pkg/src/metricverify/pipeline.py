"""End-to-end desk-scale runs: data, backbone, verifier and both protocols."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import Backbone, extract_dataset
from .config import Settings
from .evaluation import (
    EvalReport,
    classifier_eval,
    cosine_similarity,
    decisions_report,
    optimal_threshold,
    tenfold_cosine_eval,
)
from .exceptions import ConfigurationError
from .sampling import IdentityDataset, PairBatch, make_eval_pairs, synth_identities
from .tensor import RngStream
from .training import train_backbone, train_joint, train_verifier
from .verifier import VerifierModel


def split_holdout(ds: IdentityDataset, n_holdout: int):
    """Reserve the last ``n_holdout`` samples of every identity for evaluation."""
    short = [k for k, v in ds.identities.items() if len(v) < n_holdout + 2]
    if short:
        raise ConfigurationError(
            f"holdout={n_holdout} leaves fewer than 2 training samples for identities {short[:5]}"
        )
    train = IdentityDataset({k: v[: len(v) - n_holdout] for k, v in ds.identities.items()})
    test = IdentityDataset({k: v[len(v) - n_holdout:] for k, v in ds.identities.items()})
    return train, test


def generate_data(s: Settings) -> IdentityDataset:
    d = s.data
    return synth_identities(d.ids, d.per_id, d.dim, d.sigma, RngStream(s.train.seed, "data"))


@dataclass
class PipelineResult:
    backbone: Backbone
    verifier: VerifierModel
    train_features: IdentityDataset
    eval_pairs: PairBatch
    cosine: EvalReport
    classifier: EvalReport

    def report_text(self) -> str:
        return ("[cosine]\n" + self.cosine.to_text()
                + "[verifier]\n" + self.classifier.to_text())


def train_stack(s: Settings, train_raw: IdentityDataset, joint: bool = False):
    """Backbone + verifier on raw training data; returns ``(backbone, verifier, features)``."""
    tc = s.train_config()
    bcfg = s.backbone_config(train_raw.dim, len(train_raw))
    vcfg = s.verifier_config(2 * bcfg.bottleneck)
    if joint:
        backbone, verifier, _ = train_joint(train_raw, bcfg, vcfg, tc)
        return backbone, verifier, extract_dataset(backbone, train_raw)
    backbone, _ = train_backbone(train_raw, bcfg, tc)
    features = extract_dataset(backbone, train_raw)
    verifier, _ = train_verifier(features, vcfg, tc)
    return backbone, verifier, features


def run_pipeline(s: Settings, joint: bool = False, ds: IdentityDataset | None = None) -> PipelineResult:
    """Generate (or take) data, train, and score held-out pairs under both protocols."""
    ds = generate_data(s) if ds is None else ds
    train_raw, test_raw = split_holdout(ds, s.data.holdout)
    backbone, verifier, features = train_stack(s, train_raw, joint)
    test_features = extract_dataset(backbone, test_raw)
    pairs = make_eval_pairs(test_features, s.data.eval_pairs, RngStream(s.train.seed, "eval"))
    cosine = tenfold_cosine_eval(pairs, s.eval.mode)
    clf = classifier_eval(verifier, pairs).compare_to(cosine, "cosine_10fold")
    return PipelineResult(backbone, verifier, features, pairs, cosine, clf)


@dataclass
class FrozenCosine:
    """Cosine protocol fitted once: feature mean and threshold are then fixed."""

    mean: np.ndarray
    threshold: float

    @classmethod
    def fit(cls, pairs: PairBatch, mode: str = "max_accuracy") -> "FrozenCosine":
        mean = np.concatenate([pairs.a, pairs.b]).mean(axis=0)
        scores = cosine_similarity(pairs.a - mean, pairs.b - mean)
        return cls(mean, optimal_threshold(scores, pairs.same, mode))

    def decide(self, pairs: PairBatch) -> np.ndarray:
        return cosine_similarity(pairs.a - self.mean, pairs.b - self.mean) >= self.threshold

    def evaluate(self, pairs: PairBatch) -> EvalReport:
        rep = decisions_report("cosine_frozen", self.decide(pairs), pairs.same)
        rep.thresholds = [self.threshold]
        return rep


@dataclass
class ShiftResult:
    cosine_frozen: EvalReport  # A's mean and threshold applied to B
    cosine_refit: EvalReport  # 10-fold protocol refit on B
    verifier: EvalReport  # trained on A, applied to B unchanged
    verifier_in_domain: EvalReport


def shifted(pairs: PairBatch, scale: float, bias: float) -> PairBatch:
    return pairs.map(lambda x: scale * x + bias)


def shift_experiment(s: Settings, scale: float = 0.5, bias_fraction: float = 0.5) -> ShiftResult:
    """Train on distribution A, evaluate on B = ``scale * feature + bias``.

    ``bias`` is the same constant in every coordinate, ``bias_fraction`` times
    the root-mean-square coordinate of A's training features.
    """
    ds = generate_data(s)
    train_raw, test_raw = split_holdout(ds, s.data.holdout)
    backbone, verifier, features = train_stack(s, train_raw)
    fit_pairs = make_eval_pairs(features, s.data.eval_pairs, RngStream(s.train.seed, "fit"))
    frozen = FrozenCosine.fit(fit_pairs, s.eval.mode)

    test_features = extract_dataset(backbone, test_raw)
    pairs_a = make_eval_pairs(test_features, s.data.eval_pairs, RngStream(s.train.seed, "eval"))
    X, _ = features.to_arrays()
    bias = bias_fraction * float(np.sqrt(np.mean(X**2)))
    pairs_b = shifted(pairs_a, scale, bias)
    return ShiftResult(
        cosine_frozen=frozen.evaluate(pairs_b),
        cosine_refit=tenfold_cosine_eval(pairs_b, s.eval.mode),
        verifier=classifier_eval(verifier, pairs_b),
        verifier_in_domain=classifier_eval(verifier, pairs_a),
    )
