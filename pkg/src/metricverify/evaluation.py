"""Verification protocols: 10-fold cosine thresholding and threshold-free classification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateInputError, DimensionError, DomainError, ProtocolError
from .sampling import PairBatch
from .tensor import as_tensor

THRESHOLD_MODES = ("max_accuracy", "eer")
N_FOLDS = 10


@dataclass
class EvalReport:
    """Error rates of one protocol run.

    ``thresholds``/``fold_accuracies`` are empty for the threshold-free protocol.
    """

    protocol: str
    error_rate: float
    n_pairs: int
    far: float
    frr: float
    fold_accuracies: list[float] = field(default_factory=list)
    thresholds: list[float] = field(default_factory=list)
    mode: str | None = None
    baseline: str | None = None
    relative_error_reduction: float | None = None

    @property
    def accuracy(self) -> float:
        return 1.0 - self.error_rate

    def compare_to(self, base: "EvalReport", name: str) -> "EvalReport":
        """Record ``base`` as the baseline; the reduction stays undefined when its error is 0."""
        self.baseline = name
        self.relative_error_reduction = (
            relative_error_reduction(base.error_rate, self.error_rate) if base.error_rate > 0 else None
        )
        return self

    def to_text(self) -> str:
        """Flat ``key=value`` block, one entry per line."""
        fmt = lambda v: repr(float(v))
        lines = [
            f"protocol={self.protocol}",
            f"n_pairs={self.n_pairs}",
            f"error_rate={fmt(self.error_rate)}",
            f"accuracy={fmt(self.accuracy)}",
            f"far={fmt(self.far)}",
            f"frr={fmt(self.frr)}",
        ]
        if self.mode is not None:
            lines.append(f"mode={self.mode}")
        if self.fold_accuracies:
            lines.append("fold_accuracies=" + ",".join(fmt(v) for v in self.fold_accuracies))
        if self.thresholds:
            lines.append("thresholds=" + ",".join(fmt(v) for v in self.thresholds))
        if self.baseline is not None:
            lines.append(f"baseline={self.baseline}")
            red = self.relative_error_reduction
            lines.append(f"relative_error_reduction={'n/a' if red is None else fmt(red)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        floats = lambda key: [float(v) for v in kv[key].split(",")] if kv.get(key) else []
        try:
            rep = cls(
                protocol=kv["protocol"],
                error_rate=float(kv["error_rate"]),
                n_pairs=int(kv["n_pairs"]),
                far=float(kv["far"]),
                frr=float(kv["frr"]),
                fold_accuracies=floats("fold_accuracies"),
                thresholds=floats("thresholds"),
                mode=kv.get("mode"),
                baseline=kv.get("baseline"),
            )
        except (KeyError, ValueError) as exc:
            raise ProtocolError(f"malformed report: {exc}") from None
        red = kv.get("relative_error_reduction", "n/a")
        if red != "n/a":
            rep.relative_error_reduction = float(red)
        return rep


def cosine_similarity(a, b):
    """Cosine of the angle between two features, or row-wise for ``(N, D)`` arrays."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"feature shapes differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateInputError("cosine similarity is undefined for zero-norm features")
    cos = np.clip(np.sum(a * b, axis=-1) / (na * nb), -1.0, 1.0)
    return float(cos) if np.ndim(cos) == 0 else cos


def _check_scores(scores, labels):
    s = as_tensor(scores, 1, "scores")
    y = np.asarray(labels, dtype=bool)
    if y.shape != s.shape:
        raise DimensionError(f"{s.shape[0]} scores but {y.shape} labels")
    if y.all() or not y.any():
        raise ProtocolError("both same and different pairs are required")
    return s, y


def threshold_candidates(scores) -> np.ndarray:
    """Midpoints between adjacent distinct scores plus one sentinel on each side."""
    u = np.unique(scores)
    return np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2, [u[-1] + 1.0]])


def far_frr(scores, labels, threshold: float):
    """``(FAR, FRR)`` when pairs with ``score >= threshold`` are declared the same."""
    s, y = _check_scores(scores, labels)
    accept = s >= threshold
    return float(accept[~y].mean()), float((~accept[y]).mean())


def _sweep(s, y):
    """Candidate thresholds with the number of accepted positives/negatives at each."""
    cands = threshold_candidates(s)
    order = np.sort(s[y])
    neg = np.sort(s[~y])
    tp = order.size - np.searchsorted(order, cands, side="left")
    fp = neg.size - np.searchsorted(neg, cands, side="left")
    return cands, tp, fp


def optimal_threshold(scores, labels, mode: str = "max_accuracy") -> float:
    """Decision threshold fitted to labeled scores.

    ``max_accuracy`` returns the smallest candidate reaching the best accuracy;
    ``eer`` returns the candidate minimizing ``|FAR - FRR|`` (smallest on ties).
    """
    if mode not in THRESHOLD_MODES:
        raise ProtocolError(f"mode must be one of {THRESHOLD_MODES}, got {mode!r}")
    s, y = _check_scores(scores, labels)
    cands, tp, fp = _sweep(s, y)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if mode == "max_accuracy":
        correct = tp + (n_neg - fp)
        return float(cands[int(np.argmax(correct))])
    far = fp / n_neg
    frr = 1.0 - tp / n_pos
    return float(cands[int(np.argmin(np.abs(far - frr)))])


def accuracy_at(scores, labels, threshold: float) -> float:
    s = as_tensor(scores, 1, "scores")
    y = np.asarray(labels, dtype=bool)
    return float(np.mean((s >= threshold) == y))


def fold_assignment(n: int, n_folds: int = N_FOLDS, rng=None) -> np.ndarray:
    """Fold id per pair: contiguous near-equal blocks in input order, or a seeded shuffle."""
    folds = np.empty(n, dtype=np.int64)
    for k, block in enumerate(np.array_split(np.arange(n), n_folds)):
        folds[block] = k
    if rng is not None:
        folds = folds[rng.gen.permutation(n)]
    return folds


def tenfold_cosine_eval(pairs: PairBatch, mode: str = "max_accuracy", rng=None) -> EvalReport:
    """Cosine-similarity verification with mean subtraction and thresholds fit on nine folds.

    For each held-out fold, the feature mean over every vector in the other
    nine folds is subtracted from all features, the threshold is fit on the
    nine folds' scores and accuracy is measured on the held-out fold.
    """
    if len(pairs) < N_FOLDS:
        raise ProtocolError(f"10-fold evaluation needs at least 10 pairs, got {len(pairs)}")
    folds = fold_assignment(len(pairs), N_FOLDS, rng)
    accs, thresholds, fars, frrs = [], [], [], []
    for k in range(N_FOLDS):
        test = folds == k
        train = ~test
        if pairs.same[train].all() or not pairs.same[train].any():
            raise ProtocolError(f"training folds for fold {k} lack one of the labels")
        mean = np.concatenate([pairs.a[train], pairs.b[train]]).mean(axis=0)
        scores = cosine_similarity(pairs.a - mean, pairs.b - mean)
        thr = optimal_threshold(scores[train], pairs.same[train], mode)
        accs.append(accuracy_at(scores[test], pairs.same[test], thr))
        thresholds.append(thr)
        accept = scores[test] >= thr
        lab = pairs.same[test]
        fars.append(accept[~lab].mean() if (~lab).any() else 0.0)
        frrs.append((~accept[lab]).mean() if lab.any() else 0.0)
    return EvalReport(
        protocol="cosine_10fold",
        error_rate=1.0 - float(np.mean(accs)),
        n_pairs=len(pairs),
        far=float(np.mean(fars)),
        frr=float(np.mean(frrs)),
        fold_accuracies=[float(a) for a in accs],
        thresholds=thresholds,
        mode=mode,
    )


def decisions_report(protocol: str, decided_same, same) -> EvalReport:
    decided = np.asarray(decided_same, dtype=bool)
    same = np.asarray(same, dtype=bool)
    far = float(decided[~same].mean()) if (~same).any() else 0.0
    frr = float((~decided[same]).mean()) if same.any() else 0.0
    return EvalReport(
        protocol=protocol,
        error_rate=float(np.mean(decided != same)),
        n_pairs=int(same.size),
        far=far,
        frr=frr,
    )


def classifier_eval(model, pairs: PairBatch) -> EvalReport:
    """Decide every pair with the verifier in evaluation mode; no threshold is fit."""
    from .verifier import verify_decision, verify_forward

    probs = verify_forward(model, np.stack([pairs.a, pairs.b], axis=1), training=False)
    return decisions_report("verifier", verify_decision(probs), pairs.same)


def relative_error_reduction(base_error: float, new_error: float) -> float:
    """Percentage reduction of ``new_error`` relative to ``base_error`` (negative if worse)."""
    if not base_error > 0:
        raise DomainError(f"base_error must be positive, got {base_error}")
    if new_error < 0:
        raise DomainError(f"new_error must be non-negative, got {new_error}")
    return 100.0 * (base_error - new_error) / base_error
