"""Classification and verification losses with analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev

from .exceptions import (
    ConfigurationError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    LabelError,
    PreconditionError,
)
from .tensor import LinearParams, as_tensor, softmax_probs

LOSS_KINDS = ("softmax", "a_softmax", "focal")


@dataclass
class LossConfig:
    kind: str = "softmax"
    margin_m: int = 2
    gamma: float = 2.0
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigurationError(f"kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if int(self.margin_m) != self.margin_m or self.margin_m < 1:
            raise ConfigurationError(f"margin_m must be an integer >= 1, got {self.margin_m}")
        self.margin_m = int(self.margin_m)
        if self.gamma < 0:
            raise ConfigurationError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 <= self.alpha <= 1:
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass
class ClassHead:
    """Class-weight matrix, one row per class, no bias."""

    weights: np.ndarray  # (C, D)
    normalize_rows: bool = True

    def __post_init__(self):
        self.weights = as_tensor(self.weights, 2, "weights")
        if self.normalize_rows:
            self.renormalize()

    @classmethod
    def init(cls, n_classes: int, dim: int, rng) -> "ClassHead":
        return cls(rng.gen.standard_normal((n_classes, dim)))

    def renormalize(self):
        norms = np.linalg.norm(self.weights, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise DegenerateInputError("class head has a zero-norm row")
        self.weights /= norms

    def rows_are_unit(self, tol: float = 1e-6) -> bool:
        return bool(np.all(np.abs(np.linalg.norm(self.weights, axis=1) - 1) <= tol))


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n_rows,):
        raise DimensionError(f"expected {n_rows} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise LabelError("labels must be integers")
        y = y.astype(np.int64)
    if np.any((y < 0) | (y >= n_classes)):
        raise LabelError(f"labels must lie in [0, {n_classes}), got {y.min()}..{y.max()}")
    return y


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    z = as_tensor(logits, 2, "logits")
    y = _check_labels(labels, z.shape[0], z.shape[1])
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, y]))
    grad = softmax_probs(z)
    grad[rows, y] -= 1.0
    return loss, grad / n


def binary_posteriors(x, p1: LinearParams, p2: LinearParams):
    """Two-class softmax posteriors from a pair of one-output affine maps."""
    v = as_tensor(x, 1, "x")
    for p in (p1, p2):
        if p.weights.shape != (v.shape[0], 1):
            raise DimensionError(
                f"posterior weights {p.weights.shape} do not map {v.shape[0]} -> 1"
            )
    s1 = float(v @ p1.weights[:, 0] + p1.bias[0])
    s2 = float(v @ p2.weights[:, 0] + p2.bias[0])
    probs = softmax_probs([s1, s2])[0]
    return float(probs[0]), float(probs[1])


def _phi_branch(theta, m: int):
    # lower k at the breakpoints k*pi/m
    k = np.ceil(np.asarray(theta) * m / np.pi) - 1
    return np.clip(k, 0, m - 1).astype(np.int64)


def angular_phi(theta, m: int):
    """Monotone extension of ``cos(m * theta)`` over ``[0, pi]``.

    ``phi = (-1)**k * cos(m * theta) - 2k`` on ``[k*pi/m, (k+1)*pi/m]``.
    Accepts a scalar or an array of angles.
    """
    if int(m) != m or m < 1:
        raise DomainError(f"m must be an integer >= 1, got {m}")
    t = np.asarray(theta, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any((t < 0) | (t > np.pi)):
        raise DomainError("theta must lie in [0, pi]")
    k = _phi_branch(t, m)
    out = np.where(k % 2 == 0, 1.0, -1.0) * np.cos(m * t) - 2.0 * k
    return float(out) if out.ndim == 0 else out


def _phi_of_cos(c, m: int):
    """``phi`` and ``d phi / d cos(theta)`` evaluated from the cosine directly."""
    k = _phi_branch(np.arccos(c), m)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    coef = np.zeros(m + 1)
    coef[m] = 1.0
    value = sign * chebyshev.chebval(c, coef) - 2.0 * k
    slope = sign * chebyshev.chebval(c, chebyshev.chebder(coef))
    return value, slope


def _a_softmax(x, w, y, m):
    """A-Softmax loss and gradients; rows of ``w`` are normalized internally."""
    n = x.shape[0]
    rows = np.arange(n)
    x_norm = np.linalg.norm(x, axis=1)
    w_norm = np.linalg.norm(w, axis=1)
    x_hat = x / x_norm[:, None]
    w_hat = w / w_norm[:, None]
    cos = np.clip(x_hat @ w_hat.T, -1.0, 1.0)  # (B, C)

    psi = cos.copy()
    dpsi = np.ones_like(cos)
    phi, dphi = _phi_of_cos(cos[rows, y], m)
    psi[rows, y] = phi
    dpsi[rows, y] = dphi
    logits = x_norm[:, None] * psi

    loss, g = softmax_cross_entropy(logits, y)  # g = dL/dlogits

    # logit_ij = |x_i| psi(c_ij); dc/dx = (w_hat - c x_hat)/|x|, dc/dw = (x_hat - c w_hat)/|w|
    g_c = g * x_norm[:, None] * dpsi
    grad_x = (g * psi).sum(axis=1)[:, None] * x_hat
    grad_x += (g_c @ w_hat - (g_c * cos).sum(axis=1)[:, None] * x_hat) / x_norm[:, None]
    grad_w = (g_c.T @ x_hat - (g_c * cos).sum(axis=0)[:, None] * w_hat) / w_norm[:, None]
    return loss, grad_x, grad_w, logits


def a_softmax_loss(features, head: ClassHead, labels, m: int):
    """Angular-margin softmax loss.

    The true-class logit is ``|x| * phi(theta_y)`` and every other logit is
    ``|x| * cos(theta_j)``, where ``theta_j`` is the angle between the feature
    and the j-th class row.

    Returns
    -------
    loss : float
    grad_features : ndarray, shape (B, D)
    grad_weights : ndarray, shape (C, D)
    """
    x = as_tensor(features, 2, "features")
    if not head.normalize_rows or not head.rows_are_unit():
        raise PreconditionError("A-Softmax requires a class head with unit-norm rows")
    if head.weights.shape[1] != x.shape[1]:
        raise DimensionError(
            f"features {x.shape} incompatible with class head {head.weights.shape}"
        )
    if int(m) != m or m < 1:
        raise DomainError(f"m must be an integer >= 1, got {m}")
    y = _check_labels(labels, x.shape[0], head.weights.shape[0])
    if np.any(np.linalg.norm(x, axis=1) == 0):
        raise DegenerateInputError("A-Softmax is undefined for zero-norm features")
    loss, gx, gw, _ = _a_softmax(x, head.weights, y, int(m))
    return loss, gx, gw


def a_softmax_logits(features, head: ClassHead, labels, m: int) -> np.ndarray:
    x = as_tensor(features, 2, "features")
    y = _check_labels(labels, x.shape[0], head.weights.shape[0])
    return _a_softmax(x, head.weights, y, int(m))[3]


def focal_pt(p_match, same) -> np.ndarray:
    """Probability assigned to the ground truth: ``p`` for matches, ``1 - p`` otherwise."""
    p = np.asarray(p_match, dtype=np.float64)
    return np.where(np.asarray(same, dtype=bool), p, 1.0 - p)


def focal_alpha_t(alpha: float, same) -> np.ndarray:
    return np.where(np.asarray(same, dtype=bool), alpha, 1.0 - alpha)


def focal_loss(prob_true, alpha_t, gamma: float):
    """Mean of ``-alpha_t * (1 - p_t)**gamma * log(p_t)`` and its gradient w.r.t. ``p_t``.

    ``p_t`` is not clamped; values outside ``(0, 1]`` are rejected.
    """
    p = as_tensor(prob_true, 1, "prob_true")
    a = np.broadcast_to(as_tensor(alpha_t), p.shape)
    if gamma < 0:
        raise DomainError(f"gamma must be >= 0, got {gamma}")
    if np.any(~(p > 0)) or np.any(p > 1):
        raise DomainError("p_t must lie in (0, 1]")
    if np.any((a < 0) | (a > 1)):
        raise DomainError("alpha_t must lie in [0, 1]")
    n = p.shape[0]
    q = 1.0 - p
    log_p = np.log(p)
    loss = float(np.mean(-a * q**gamma * log_p))
    # d/dp [q^g log p] = -g q^(g-1) log p + q^g / p; the first term vanishes as p -> 1
    safe_q = np.where(q > 0, q, 1.0)
    first = np.where(q > 0, gamma * safe_q ** (gamma - 1) * log_p, 0.0) if gamma else 0.0
    grad = -a * (q**gamma / p - first) / n
    return loss, grad
