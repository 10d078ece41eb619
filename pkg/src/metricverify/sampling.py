"""Identity datasets, balanced pair sampling and hard-pair mining."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    ConfigurationError,
    DatasetError,
    DegenerateInputError,
    DimensionError,
    TrainingError,
)
from .tensor import RngStream, as_tensor

METRICS = ("euclidean", "cosine_distance")


@dataclass
class IdentityDataset:
    """Feature vectors grouped by integer identity id."""

    identities: dict[int, np.ndarray]
    dim: int = field(default=None)

    def __post_init__(self):
        if len(self.identities) < 2:
            raise DatasetError(f"need at least 2 identities, got {len(self.identities)}")
        fixed = {}
        for key, feats in self.identities.items():
            arr = as_tensor(feats)
            if arr.ndim == 1:
                arr = arr[None, :]
            if arr.ndim != 2 or arr.shape[0] < 1:
                raise DatasetError(f"identity {key} has no samples")
            fixed[int(key)] = arr
        dims = {a.shape[1] for a in fixed.values()}
        if self.dim is None:
            self.dim = dims.pop() if len(dims) == 1 else None
        if self.dim is None or dims - {self.dim}:
            raise DimensionError(f"inconsistent feature lengths {sorted(dims)}")
        self.identities = dict(sorted(fixed.items()))
        self.ids = np.array(list(self.identities), dtype=np.int64)

    @classmethod
    def from_arrays(cls, X, y) -> "IdentityDataset":
        X = as_tensor(X, 2, "X")
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise DimensionError(f"{X.shape[0]} samples but {y.shape} labels")
        return cls({int(k): X[y == k] for k in np.unique(y)}, dim=X.shape[1])

    def to_arrays(self):
        X = np.concatenate(list(self.identities.values()))
        y = np.concatenate([np.full(len(v), k) for k, v in self.identities.items()])
        return X, y

    def map(self, fn) -> "IdentityDataset":
        """Apply ``fn`` to every identity's ``(n, D)`` block."""
        return IdentityDataset({k: fn(v) for k, v in self.identities.items()})

    @property
    def n_samples(self) -> int:
        return sum(len(v) for v in self.identities.values())

    def __len__(self):
        return len(self.identities)


@dataclass
class VerificationPair:
    a: np.ndarray
    b: np.ndarray
    same: bool


@dataclass
class PairBatch:
    """Labeled feature pairs stored column-wise.

    ``id_*``/``idx_*`` record which identity and sample each member came from
    when the batch was drawn from an :class:`IdentityDataset`.
    """

    a: np.ndarray
    b: np.ndarray
    same: np.ndarray
    id_a: np.ndarray | None = None
    id_b: np.ndarray | None = None
    idx_a: np.ndarray | None = None
    idx_b: np.ndarray | None = None

    def __post_init__(self):
        self.a = as_tensor(self.a, 2, "a")
        self.b = as_tensor(self.b, 2, "b")
        self.same = np.asarray(self.same, dtype=bool)
        if self.a.shape != self.b.shape or self.same.shape != (self.a.shape[0],):
            raise DimensionError(
                f"pair arrays disagree: a {self.a.shape}, b {self.b.shape}, labels {self.same.shape}"
            )

    @classmethod
    def from_pairs(cls, pairs) -> "PairBatch":
        pairs = list(pairs)
        if not pairs:
            raise DatasetError("no pairs")
        return cls(
            np.stack([p.a for p in pairs]),
            np.stack([p.b for p in pairs]),
            np.array([p.same for p in pairs]),
        )

    @property
    def pairs(self) -> list[VerificationPair]:
        return [VerificationPair(a, b, bool(s)) for a, b, s in zip(self.a, self.b, self.same)]

    @property
    def dim(self) -> int:
        return self.a.shape[1]

    def subset(self, index) -> "PairBatch":
        pick = lambda v: None if v is None else v[index]
        return PairBatch(
            self.a[index], self.b[index], self.same[index],
            pick(self.id_a), pick(self.id_b), pick(self.idx_a), pick(self.idx_b),
        )

    def map(self, fn) -> "PairBatch":
        """Apply ``fn`` to both feature columns, keeping labels and provenance."""
        return PairBatch(fn(self.a), fn(self.b), self.same,
                         self.id_a, self.id_b, self.idx_a, self.idx_b)

    def __len__(self):
        return self.same.shape[0]


@dataclass
class MiningConfig:
    tau_neg: float
    tau_pos: float
    metric: str = "euclidean"

    def __post_init__(self):
        if not self.tau_neg > 0 or not self.tau_pos > 0:
            raise ConfigurationError(
                f"thresholds must be positive, got tau_neg={self.tau_neg}, tau_pos={self.tau_pos}"
            )
        if self.metric not in METRICS:
            raise ConfigurationError(f"metric must be one of {METRICS}, got {self.metric!r}")


def synth_identities(num_ids: int, per_id: int, dim: int, sigma: float, rng: RngStream):
    """Gaussian identity clusters: centers ~ N(0, I), samples = center + sigma * N(0, I)."""
    if num_ids < 2 or per_id < 1 or dim < 1 or sigma < 0:
        raise ConfigurationError(
            f"invalid synthetic dataset: num_ids={num_ids}, per_id={per_id}, dim={dim}, sigma={sigma}"
        )
    centers = rng.gen.standard_normal((num_ids, dim))
    noise = rng.gen.standard_normal((num_ids, per_id, dim))
    samples = centers[:, None, :] + sigma * noise
    return IdentityDataset({i: samples[i] for i in range(num_ids)}, dim=dim)


def sample_balanced_batch(ds: IdentityDataset, batch_size: int, rng: RngStream) -> PairBatch:
    """Half same-identity pairs, half different-identity pairs, shuffled.

    Positive pairs come from ``batch_size // 2`` distinct identities (two
    distinct samples each); negatives pair samples of two distinct identities.
    """
    if batch_size < 2 or batch_size % 2:
        raise ConfigurationError(f"batch_size must be even and >= 2, got {batch_size}")
    half = batch_size // 2
    counts = np.array([len(ds.identities[k]) for k in ds.ids])
    eligible = ds.ids[counts >= 2]
    if len(eligible) < half:
        raise DatasetError(
            f"need {half} identities with >= 2 samples for positive pairs, "
            f"have {len(eligible)} (short by {half - len(eligible)})"
        )
    gen = rng.gen

    pos_ids = gen.choice(eligible, size=half, replace=False)
    pos_idx = np.empty((half, 2), dtype=np.int64)
    for i, k in enumerate(pos_ids):
        pos_idx[i] = gen.choice(len(ds.identities[k]), size=2, replace=False)

    neg_ids = np.empty((half, 2), dtype=np.int64)
    neg_idx = np.empty((half, 2), dtype=np.int64)
    for i in range(half):
        neg_ids[i] = gen.choice(ds.ids, size=2, replace=False)
        neg_idx[i] = [gen.integers(len(ds.identities[k])) for k in neg_ids[i]]

    id_a = np.concatenate([pos_ids, neg_ids[:, 0]])
    id_b = np.concatenate([pos_ids, neg_ids[:, 1]])
    idx_a = np.concatenate([pos_idx[:, 0], neg_idx[:, 0]])
    idx_b = np.concatenate([pos_idx[:, 1], neg_idx[:, 1]])
    same = np.arange(batch_size) < half

    order = gen.permutation(batch_size)
    id_a, id_b, idx_a, idx_b, same = (v[order] for v in (id_a, id_b, idx_a, idx_b, same))
    a = np.stack([ds.identities[k][j] for k, j in zip(id_a, idx_a)])
    b = np.stack([ds.identities[k][j] for k, j in zip(id_b, idx_b)])
    return PairBatch(a, b, same, id_a, id_b, idx_a, idx_b)


def pair_distance(a, b, metric: str = "euclidean"):
    """Distance between two features, or row-wise between two ``(N, D)`` arrays."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"feature shapes differ: {a.shape} vs {b.shape}")
    if metric == "euclidean":
        # scale by the largest difference so tiny nonzero gaps do not underflow to 0
        diff = a - b
        scale = np.max(np.abs(diff), axis=-1, keepdims=True)
        safe = np.where(scale > 0, scale, 1.0)
        d = scale[..., 0] * np.linalg.norm(diff / safe, axis=-1)
    elif metric == "cosine_distance":
        na = np.linalg.norm(a, axis=-1)
        nb = np.linalg.norm(b, axis=-1)
        if np.any(na == 0) or np.any(nb == 0):
            raise DegenerateInputError("cosine distance is undefined for zero-norm features")
        cos = np.clip(np.sum(a * b, axis=-1) / (na * nb), -1.0, 1.0)
        d = 1.0 - cos
    else:
        raise ConfigurationError(f"unknown metric {metric!r}")
    return float(d) if np.ndim(d) == 0 else d


def filter_hard(batch: PairBatch, cfg: MiningConfig) -> PairBatch:
    """Keep close different-identity pairs and distant same-identity pairs, in order."""
    d = pair_distance(batch.a, batch.b, cfg.metric)
    keep = np.where(batch.same, d > cfg.tau_pos, d < cfg.tau_neg)
    return batch.subset(np.flatnonzero(keep))


def sample_mined_batch(
    ds: IdentityDataset,
    batch_size: int,
    cfg: MiningConfig,
    rng: RngStream,
    max_retries: int = 100,
) -> tuple[PairBatch, float]:
    """Balanced batch followed by hard mining; resample while one side is drained.

    Returns the mined batch and the fraction of sampled pairs that were kept.
    """
    for _ in range(max_retries + 1):
        batch = sample_balanced_batch(ds, batch_size, rng)
        mined = filter_hard(batch, cfg)
        if mined.same.any() and (~mined.same).any():
            return mined, len(mined) / len(batch)
        starved = "positive" if not mined.same.any() else "negative"
    raise TrainingError(
        f"hard mining drained the {starved} side after {max_retries} resamples "
        f"(tau_pos={cfg.tau_pos}, tau_neg={cfg.tau_neg})"
    )


def default_mining_config(
    ds: IdentityDataset, rng: RngStream, metric: str = "euclidean", n_batches: int = 20
) -> MiningConfig:
    """Median positive/negative pair distances over a few sampled batches."""
    pos, neg = [], []
    half = min(16, sum(len(v) >= 2 for v in ds.identities.values()))
    for _ in range(n_batches):
        batch = sample_balanced_batch(ds, 2 * half, rng)
        d = pair_distance(batch.a, batch.b, metric)
        pos.append(d[batch.same])
        neg.append(d[~batch.same])
    tau_pos = float(np.median(np.concatenate(pos)))
    tau_neg = float(np.median(np.concatenate(neg)))
    eps = np.finfo(float).tiny
    return MiningConfig(tau_neg=max(tau_neg, eps), tau_pos=max(tau_pos, eps), metric=metric)


def combine_flipped(f_orig, f_flip) -> np.ndarray:
    """Concatenate a feature with the feature of its flipped input (row-wise for 2-D input)."""
    a = as_tensor(f_orig)
    b = as_tensor(f_flip)
    if a.shape != b.shape:
        raise DimensionError(f"feature shapes differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=-1)


def make_eval_pairs(ds: IdentityDataset, n_pairs: int, rng: RngStream) -> PairBatch:
    """A balanced evaluation pair list built from repeated balanced batches."""
    if n_pairs < 2 or n_pairs % 2:
        raise ConfigurationError(f"n_pairs must be even and >= 2, got {n_pairs}")
    half = min(n_pairs // 2, sum(len(v) >= 2 for v in ds.identities.values()))
    chunks, total = [], 0
    while total < n_pairs:
        size = min(2 * half, n_pairs - total)
        chunks.append(sample_balanced_batch(ds, size, rng))
        total += size
    cat = lambda name: np.concatenate([getattr(c, name) for c in chunks])
    return PairBatch(cat("a"), cat("b"), cat("same"),
                     cat("id_a"), cat("id_b"), cat("idx_a"), cat("idx_b"))
