"""scikit-learn compatible wrappers.

Pairs are passed as arrays of shape ``(n_pairs, 2, n_features)`` with
binary targets (1 = same identity). Identity-labeled features are passed as
``(n_samples, n_features)`` with integer identity labels.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .backbone import BackboneConfig, extract_feature
from .evaluation import cosine_similarity, optimal_threshold
from .exceptions import DimensionError
from .losses import LossConfig
from .sampling import IdentityDataset, MiningConfig, PairBatch
from .training import TrainConfig, train_backbone, train_verifier
from .verifier import MATCH, NONMATCH, VerifierConfig, verify_decision, verify_forward


def check_pairs(pairs, n_features: int | None = None) -> np.ndarray:
    """Validate pairs into a finite float ``(n, 2, D)`` array; accepts a :class:`PairBatch`."""
    if isinstance(pairs, PairBatch):
        pairs = np.stack([pairs.a, pairs.b], axis=1)
    arr = check_array(pairs, allow_nd=True, dtype=np.float64, ensure_all_finite=True)
    if arr.ndim != 3 or arr.shape[1] != 2:
        raise DimensionError(f"pairs must have shape (n_pairs, 2, n_features), got {arr.shape}")
    if n_features is not None and arr.shape[2] != n_features:
        raise DimensionError(f"expected {n_features} features per member, got {arr.shape[2]}")
    return np.ascontiguousarray(arr)


def check_pair_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise DimensionError(f"{n} pairs but labels of shape {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("pair labels must be 0 (different) or 1 (same)")
    return y.astype(bool)


def check_identity_data(X, y):
    X = check_array(X, dtype=np.float64, ensure_min_samples=2)
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise DimensionError(f"{X.shape[0]} samples but labels of shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError("identity labels must be integers")
    return X, y


def pair_arrays(batch: PairBatch):
    """``(pairs, y)`` arrays for a :class:`PairBatch`."""
    return np.stack([batch.a, batch.b], axis=1), batch.same.astype(np.int64)


class AngularMarginEmbedder(TransformerMixin, BaseEstimator):
    """Embedding network trained with the angular-margin softmax.

    ``transform`` returns the bottleneck feature of each sample concatenated
    with the bottleneck feature of its flipped input (length ``2 * bottleneck``).
    """

    def __init__(self, hidden_widths=(64,), bottleneck=16, margin_m=2, flip="reverse",
                 batch_size=32, learning_rate=0.05, n_steps=3000, random_state=0):
        self.hidden_widths = hidden_widths
        self.bottleneck = bottleneck
        self.margin_m = margin_m
        self.flip = flip
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.n_steps = n_steps
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_identity_data(X, y)
        ds = IdentityDataset.from_arrays(X, y)
        cfg = BackboneConfig(X.shape[1], len(ds), self.hidden_widths, self.bottleneck,
                             self.margin_m, self.flip)
        tc = TrainConfig(self.batch_size, self.learning_rate, self.n_steps, seed=self.random_state)
        self.backbone_, self.curve_ = train_backbone(ds, cfg, tc)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "backbone_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return extract_feature(self.backbone_, X)


class PairVerifier(ClassifierMixin, BaseEstimator):
    """Two-channel verification classifier.

    ``fit`` takes identity-labeled features and trains on balanced pair
    batches drawn from them; ``predict`` takes pairs and needs no threshold.
    """

    def __init__(self, depth=7, first_layer="conv1x1", kernel_count=32, hidden_width=64,
                 regularizer="dropout", dropout_rate=0.5, pair_swap=False, loss="softmax",
                 gamma=2.0, alpha=0.5, mining=None, batch_size=32, learning_rate=0.05,
                 n_steps=3000, random_state=0):
        self.depth = depth
        self.first_layer = first_layer
        self.kernel_count = kernel_count
        self.hidden_width = hidden_width
        self.regularizer = regularizer
        self.dropout_rate = dropout_rate
        self.pair_swap = pair_swap
        self.loss = loss
        self.gamma = gamma
        self.alpha = alpha
        self.mining = mining
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.n_steps = n_steps
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_identity_data(X, y)
        ds = IdentityDataset.from_arrays(X, y)
        vcfg = VerifierConfig(X.shape[1], self.depth, self.first_layer, self.kernel_count,
                              self.hidden_width, self.regularizer, self.dropout_rate, self.pair_swap)
        mining = self.mining
        if isinstance(mining, dict):
            mining = MiningConfig(**mining)
        tc = TrainConfig(self.batch_size, self.learning_rate, self.n_steps,
                         LossConfig(self.loss, gamma=self.gamma, alpha=self.alpha),
                         mining, seed=self.random_state)
        self.model_, self.curve_ = train_verifier(ds, vcfg, tc)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, pairs):
        """Columns follow ``classes_``: ``[p_nonmatch, p_match]``."""
        check_is_fitted(self, "model_")
        probs = verify_forward(self.model_, check_pairs(pairs, self.n_features_in_))
        return probs[:, [NONMATCH, MATCH]]

    def predict(self, pairs):
        check_is_fitted(self, "model_")
        probs = verify_forward(self.model_, check_pairs(pairs, self.n_features_in_))
        return verify_decision(probs).astype(np.int64)


class CosineVerifier(ClassifierMixin, BaseEstimator):
    """Cosine similarity against a threshold fitted on labeled pairs.

    With ``subtract_mean`` the mean feature of the fitting pairs is removed
    from both members before scoring.
    """

    def __init__(self, mode="max_accuracy", subtract_mean=True):
        self.mode = mode
        self.subtract_mean = subtract_mean

    def fit(self, pairs, y):
        P = check_pairs(pairs)
        same = check_pair_labels(y, P.shape[0])
        self.mean_ = P.reshape(-1, P.shape[2]).mean(axis=0) if self.subtract_mean else np.zeros(P.shape[2])
        self.n_features_in_ = P.shape[2]
        self.threshold_ = optimal_threshold(self.decision_function(P), same, self.mode)
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, pairs):
        check_is_fitted(self, "mean_")
        P = check_pairs(pairs, self.n_features_in_)
        return cosine_similarity(P[:, 0] - self.mean_, P[:, 1] - self.mean_)

    def predict(self, pairs):
        check_is_fitted(self, "threshold_")
        return (self.decision_function(pairs) >= self.threshold_).astype(np.int64)
