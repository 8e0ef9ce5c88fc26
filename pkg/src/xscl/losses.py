"""Contrastive (InfoNCE), cosine-margin and cross-entropy objectives.

Feature gradients are returned alongside loss values so the trainer can push
them back through the pooling layer and encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    margin: float = 0.4
    alpha: float = 0.5

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if not -1.0 <= self.margin <= 1.0:
            raise ConfigError("margin must lie in [-1, 1]")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")


@dataclass(frozen=True)
class ContrastFeatures:
    positives: np.ndarray  # (N/2, d)
    negatives: np.ndarray  # (N/2, d)

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positives, dtype=np.float64))
        neg = np.atleast_2d(np.asarray(self.negatives, dtype=np.float64))
        if pos.shape[0] != neg.shape[0]:
            raise ValidationError(f"{pos.shape[0]} positives vs {neg.shape[0]} negatives")
        if pos.shape[1] != neg.shape[1]:
            raise ValidationError("positive and negative feature dimensions differ")
        object.__setattr__(self, "positives", pos)
        object.__setattr__(self, "negatives", neg)

    @property
    def N(self) -> int:
        return 2 * self.positives.shape[0]


def cosine_sim(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValidationError("cosine similarity of a zero vector")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def _normalize(X):
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(X)):
        raise ValidationError("features must be finite and nonzero")
    return X / norms, norms


def _normalize_backward(dU, U, norms):
    # d(x/|x|) = (I - u u^T) / |x|
    return (dU - U * (dU * U).sum(axis=1, keepdims=True)) / norms


def _logsumexp(X, axis):
    m = X.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(X - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def contrast_loss_grad(f: ContrastFeatures, cfg: LossConfig = LossConfig()):
    """InfoNCE over ordered positive pairs; returns ``(L_c, d_positives, d_negatives)``.

    For each ordered pair (i, j) of distinct positives the per-pair term is
    ``-log(exp(s_ij/t) / (exp(s_ij/t) + sum_k exp(s_ik^neg/t)))`` and ``L_c`` is
    its mean over the N(N-2)/4 ordered pairs.
    """
    P = f.positives.shape[0]
    if P < 2:
        raise ValidationError("contrast loss needs at least two positives")
    tau = cfg.temperature
    Up, np_ = _normalize(f.positives)
    Un, nn_ = _normalize(f.negatives)
    A = (Up @ Up.T) / tau
    Z = (Up @ Un.T) / tau
    c = _logsumexp(Z, axis=1)  # (P,)
    off = ~np.eye(P, dtype=bool)
    # l_ij = logaddexp(a_ij, c_i) - a_ij = softplus(c_i - a_ij)
    D = c[:, None] - A
    L = np.logaddexp(0.0, D)
    n_pairs = P * (P - 1)
    loss = L[off].sum() / n_pairs

    S = np.where(off, 1.0 / (1.0 + np.exp(-D)), 0.0) / n_pairs  # dl/dc_i = -dl/da_ij
    dA = -S / tau
    dZ = S.sum(axis=1, keepdims=True) * np.exp(Z - c[:, None]) / tau
    dUp = (dA + dA.T) @ Up + dZ @ Un
    dUn = dZ.T @ Up
    return float(loss), _normalize_backward(dUp, Up, np_), _normalize_backward(dUn, Un, nn_)


def contrast_loss(f: ContrastFeatures, cfg: LossConfig = LossConfig()) -> float:
    return contrast_loss_grad(f, cfg)[0]


def margin_permutation(n_pos: int, rng: np.random.Generator | None) -> np.ndarray:
    if n_pos < 2 or n_pos % 2:
        raise ValidationError(f"cosine margin loss needs an even number (>= 2) of positives, got {n_pos}")
    return np.arange(n_pos) if rng is None else rng.permutation(n_pos)


def cosine_margin_loss_grad(f: ContrastFeatures, cfg: LossConfig = LossConfig(), rng=None, perm=None):
    """Cosine margin loss; returns ``(L_m, d_positives, d_negatives)``.

    Positives are shuffled (``perm`` or a draw from ``rng``) and split into
    two halves. ``L_m = alpha * mean_i(1 - sim(x1_i, x2_i))
    + mean_{i,k} max(0, sim(xp_i, xn_k) - margin)``.
    """
    P = f.positives.shape[0]
    if perm is None:
        perm = margin_permutation(P, rng)
    elif P % 2 or P < 2:
        raise ValidationError(f"cosine margin loss needs an even number (>= 2) of positives, got {P}")
    perm = np.asarray(perm)
    h = P // 2
    Up, np_ = _normalize(f.positives)
    Un, nn_ = _normalize(f.negatives)
    first, second = perm[:h], perm[h:]
    s_aligned = (Up[first] * Up[second]).sum(axis=1)
    term1 = cfg.alpha * np.mean(1.0 - s_aligned)
    S = Up @ Un.T
    excess = S - cfg.margin
    term2 = np.maximum(excess, 0.0).mean()

    dUp = np.zeros_like(Up)
    dUp[first] -= cfg.alpha / h * Up[second]
    dUp[second] -= cfg.alpha / h * Up[first]
    G = (excess > 0) / S.size
    dUp += G @ Un
    dUn = G.T @ Up
    return float(term1 + term2), _normalize_backward(dUp, Up, np_), _normalize_backward(dUn, Un, nn_)


def cosine_margin_loss(f: ContrastFeatures, cfg: LossConfig = LossConfig(), rng=None, perm=None) -> float:
    return cosine_margin_loss_grad(f, cfg, rng=rng, perm=perm)[0]


def total_loss_grad(f: ContrastFeatures, cfg: LossConfig = LossConfig(), rng=None, perm=None):
    """``L = L_c + L_m``; returns ``(L, L_c, L_m, d_positives, d_negatives)``."""
    lc, gp_c, gn_c = contrast_loss_grad(f, cfg)
    lm, gp_m, gn_m = cosine_margin_loss_grad(f, cfg, rng=rng, perm=perm)
    return lc + lm, lc, lm, gp_c + gp_m, gn_c + gn_m


def total_loss(f: ContrastFeatures, cfg: LossConfig = LossConfig(), rng=None, perm=None) -> float:
    return total_loss_grad(f, cfg, rng=rng, perm=perm)[0]


def cross_entropy_grad(scores, labels):
    """Mean cross-entropy over a batch of score rows; returns ``(loss, d_scores)``."""
    scores = np.asarray(scores)
    single = scores.ndim == 1
    S = np.atleast_2d(scores).astype(np.float64)
    y = np.atleast_1d(np.asarray(labels))
    if not np.all(np.isfinite(S)):
        raise ValidationError("scores must be finite")
    if y.shape[0] != S.shape[0]:
        raise ValidationError("one label per score row required")
    if np.any(y < 0) or np.any(y >= S.shape[1]):
        raise ValidationError(f"label out of range [0, {S.shape[1]})")
    z = S - S.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(S.shape[0])
    loss = -logp[rows, y].mean()
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    grad /= S.shape[0]
    return float(loss), (grad[0] if single else grad)


def cross_entropy(scores, label) -> float:
    return cross_entropy_grad(scores, label)[0]
