"""Spearman-complement loss on rank vectors and exact Spearman evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CacheError, DegeneratePredictionError, InputShapeError, NumericError, UndefinedCorrelationError
from .softrank import hard_rank

SIGMA_FLOOR = 1e-12


@dataclass
class RankPair:
    r_p: np.ndarray
    r_g: np.ndarray

    def __post_init__(self):
        self.r_p = np.asarray(self.r_p, dtype=np.float64)
        self.r_g = np.asarray(self.r_g, dtype=np.float64)
        if self.r_p.ndim != 1 or self.r_p.shape != self.r_g.shape or self.r_p.size < 2:
            raise InputShapeError(
                f"rank vectors must be equal-length with n >= 2, got {self.r_p.shape} and {self.r_g.shape}"
            )


@dataclass
class LossCache:
    a_hat: np.ndarray  # centred, unit-norm r_p
    b_hat: np.ndarray  # centred, unit-norm r_g
    a_norm: float
    rho: float


def spearman_loss(pair: RankPair):
    """``1 - corr(r_p, r_g)``; returns ``(loss, cache)``."""
    a = pair.r_p - pair.r_p.mean()
    b = pair.r_g - pair.r_g.mean()
    n = a.size
    a_norm = float(np.sqrt(a @ a))
    b_norm = float(np.sqrt(b @ b))
    if b_norm / np.sqrt(n) <= SIGMA_FLOOR:
        raise UndefinedCorrelationError("ground-truth ranks have zero variance")
    if a_norm / np.sqrt(n) <= SIGMA_FLOOR:
        raise DegeneratePredictionError("predicted ranks have zero variance")
    a_hat = a / a_norm
    b_hat = b / b_norm
    rho = float(np.clip(a_hat @ b_hat, -1.0, 1.0))
    return 1.0 - rho, LossCache(a_hat, b_hat, a_norm, rho)


def spearman_loss_backward(pair: RankPair, cache: LossCache) -> np.ndarray:
    """Gradient of the loss with respect to ``r_p``."""
    if not isinstance(cache, LossCache) or cache.a_hat.shape != pair.r_p.shape:
        raise CacheError("loss cache does not match this rank pair")
    return -(cache.b_hat - cache.rho * cache.a_hat) / cache.a_norm


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a = x - x.mean()
    b = y - y.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    if denom == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    return float(np.clip((a @ b) / denom, -1.0, 1.0))


def spearman_eval(x, y) -> float:
    """Spearman's rho on average-tie ranks of ``x`` and ``y``.

    Raises :class:`UndefinedCorrelationError` when either side is constant;
    callers treat that as a missing value, never as 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape or x.size < 2:
        raise InputShapeError("spearman_eval needs two equal-length vectors with n >= 2")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NumericError("spearman_eval received non-finite values")
    return pearson(hard_rank(x, "ascending"), hard_rank(y, "ascending"))
