"""Differentiable ranking by regularized projection onto the permutahedron.

The soft rank of ``theta`` is the Euclidean projection of ``-theta / eps``
(descending) onto the convex hull of all permutations of ``(n, ..., 1)``.
After sorting, that projection reduces to one L2 isotonic regression, solved
exactly by pool-adjacent-violators; the pooled block structure also gives
the Jacobian. As ``eps -> 0`` the soft ranks approach hard ranks, and rank 1
always goes to the highest score when ``direction="descending"``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import CacheError, InputShapeError, NumericError, SpecError

DIRECTIONS = ("ascending", "descending")


@dataclass(frozen=True)
class SoftRankConfig:
    regularization_strength: float = 1.0
    direction: str = "descending"

    def __post_init__(self):
        if not self.regularization_strength > 0:
            raise SpecError("regularization strength must be positive")
        if self.direction not in DIRECTIONS:
            raise SpecError(f"direction must be one of {DIRECTIONS}")


@dataclass(frozen=True)
class IsotonicBlocks:
    """Contiguous ``[start, stop)`` index ranges and the mean fitted on each."""

    bounds: Tuple[Tuple[int, int], ...]
    means: Tuple[float, ...]

    def __len__(self):
        return len(self.bounds)


def isotonic_l2(y) -> Tuple[np.ndarray, IsotonicBlocks]:
    """Project ``y`` onto the non-increasing cone (pool adjacent violators)."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size == 0:
        raise InputShapeError("isotonic regression needs a non-empty vector")
    if not np.isfinite(y).all():
        raise NumericError("isotonic regression input is not finite")
    # stack of blocks: start index, size, sum
    starts: List[int] = []
    sizes: List[int] = []
    sums: List[float] = []
    for i, v in enumerate(y.tolist()):
        starts.append(i)
        sizes.append(1)
        sums.append(v)
        # merge while the newest block's mean exceeds its predecessor's
        while len(sums) > 1 and sums[-1] * sizes[-2] > sums[-2] * sizes[-1]:
            s, n = sums.pop(), sizes.pop()
            starts.pop()
            sums[-1] += s
            sizes[-1] += n
    fit = np.empty_like(y)
    bounds, means = [], []
    for start, size, total in zip(starts, sizes, sums):
        m = total / size
        fit[start:start + size] = m
        bounds.append((start, start + size))
        means.append(m)
    return fit, IsotonicBlocks(tuple(bounds), tuple(means))


@dataclass
class SoftRankCache:
    order: np.ndarray  # permutation sorting z descending
    blocks: IsotonicBlocks
    scale: float  # dz/dscores (signed 1/eps)
    n: int


def soft_rank(scores, cfg: SoftRankConfig = SoftRankConfig()) -> Tuple[np.ndarray, SoftRankCache]:
    theta = np.asarray(scores, dtype=np.float64)
    if theta.ndim != 1 or theta.size == 0:
        raise InputShapeError("soft_rank expects a non-empty vector")
    if not np.isfinite(theta).all():
        raise NumericError("soft_rank received non-finite scores")
    n = theta.size
    scale = (-1.0 if cfg.direction == "descending" else 1.0) / cfg.regularization_strength
    z = theta * scale
    order = np.argsort(-z, kind="stable")
    s = z[order]
    w = np.arange(n, 0, -1, dtype=np.float64)
    v, blocks = isotonic_l2(s - w)
    out = np.empty(n)
    out[order] = s - v
    return out, SoftRankCache(order, blocks, scale, n)


def soft_rank_backward(cache: SoftRankCache, grad_out) -> np.ndarray:
    """Vector-Jacobian product of :func:`soft_rank`.

    In sorted coordinates the Jacobian is ``I - B`` with ``B`` averaging over
    each isotonic block, so the product subtracts block means of the incoming
    gradient.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if not isinstance(cache, SoftRankCache) or g.shape != (cache.n,):
        raise CacheError("soft-rank cache does not match gradient shape")
    gs = g[cache.order]
    out_sorted = gs.copy()
    for start, stop in cache.blocks.bounds:
        out_sorted[start:stop] -= gs[start:stop].mean()
    grad = np.empty(cache.n)
    grad[cache.order] = out_sorted
    return grad * cache.scale


def hard_rank(values, direction: str = "descending") -> np.ndarray:
    """Ranks 1..n, ties receiving the average of the positions they span."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise InputShapeError("hard_rank expects a vector")
    if not np.isfinite(x).all():
        raise NumericError("hard_rank received non-finite values")
    if direction not in DIRECTIONS:
        raise SpecError(f"direction must be one of {DIRECTIONS}")
    return rankdata(-x if direction == "descending" else x, method="average").astype(np.float64)
