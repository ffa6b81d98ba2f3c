"""Successive Halving turned into an absolute ranking.

Round ``r`` reads fidelity column ``r`` and keeps the best
``ceil(survivors / eta)`` algorithms. Algorithms eliminated later always rank
above those eliminated earlier; within one elimination level the order is by
the performance observed at that level (exact ties: lower index first).
The procedure stops once a single survivor remains or the last column has
been read, so later columns are never touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .errors import InputShapeError, NumericError, SpecError, UndefinedCorrelationError
from .meta_data import MetaDataset
from .ranking_loss import spearman_eval
from .softrank import hard_rank
from .stats import mean_sd


@dataclass(frozen=True)
class ShConfig:
    eta: int = 2
    direction: str = "higher_is_better"

    def __post_init__(self):
        if int(self.eta) != self.eta or self.eta < 2:
            raise SpecError(f"eta must be an integer >= 2, got {self.eta}")
        if self.direction != "higher_is_better":
            raise SpecError("only higher_is_better is supported")

    def schedule(self) -> str:
        return (f"successive halving, eta={self.eta}: round r reads fidelity column r "
                f"and keeps ceil(survivors/{self.eta}); stops at one survivor or the last column")


@dataclass
class ShOutcome:
    elimination_level: np.ndarray  # last column read per algorithm
    survivor: np.ndarray  # True for algorithms never eliminated
    survivor_performance: Dict[int, float]
    ranking: np.ndarray  # 1 = best
    last_level: int  # highest column read


def sh_rank(curves, cfg: ShConfig = ShConfig()) -> ShOutcome:
    curves = np.asarray(curves, dtype=np.float64)
    if curves.ndim != 2 or curves.shape[0] < 1 or curves.shape[1] < 1:
        raise InputShapeError(f"curves must be a non-empty (|A|, n) matrix, got {curves.shape}")
    n_alg, n_fid = curves.shape
    level_of = np.zeros(n_alg, dtype=int)
    blocks: List[List[int]] = []  # eliminated blocks, earliest level first
    survivors = list(range(n_alg))
    level = 0
    while True:
        col = curves[survivors, level]
        if not np.isfinite(col).all():
            raise NumericError(f"non-finite performance in fidelity column {level}")
        level_of[survivors] = level
        ordered = [a for _, a in sorted(zip((-col).tolist(), survivors))]
        if level == n_fid - 1:
            survivors = ordered
            break
        keep = math.ceil(len(survivors) / cfg.eta)
        blocks.append(ordered[keep:])
        survivors = ordered[:keep]
        if len(survivors) == 1:
            break
        level += 1

    order = list(survivors)
    for block in reversed(blocks):
        order.extend(block)
    ranking = np.empty(n_alg)
    ranking[order] = np.arange(1, n_alg + 1, dtype=np.float64)
    alive = np.zeros(n_alg, dtype=bool)
    alive[survivors] = True
    return ShOutcome(
        elimination_level=level_of,
        survivor=alive,
        survivor_performance={a: float(curves[a, level]) for a in survivors},
        ranking=ranking,
        last_level=level,
    )


@dataclass
class ShEvalResult:
    per_dataset: Dict[str, float]
    mean: float
    sd: float
    excluded: List[str] = field(default_factory=list)
    schedule: str = ""


def sh_eval(ds_test: MetaDataset, cfg: ShConfig = ShConfig()) -> ShEvalResult:
    """Spearman of the SH ranking against final-fidelity ranks, per test dataset."""
    per: Dict[str, float] = {}
    excluded: List[str] = []
    for d, did in enumerate(ds_test.dataset_ids):
        curves = ds_test.performances[d]
        truth = hard_rank(curves[:, -1], "descending")
        try:
            per[did] = spearman_eval(sh_rank(curves, cfg).ranking, truth)
        except UndefinedCorrelationError:
            excluded.append(did)
    if not per:
        raise UndefinedCorrelationError("every test dataset has a degenerate ground truth")
    mean, sd = mean_sd(per.values())
    return ShEvalResult(per, mean, sd, excluded, cfg.schedule())
