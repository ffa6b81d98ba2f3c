"""Meta-training loop and the multi-seed experiment runner."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from .baseline_sh import ShConfig, sh_eval
from .errors import ConfigError, NumericError, TrainingAbortedError
from .eval_report import DEFAULT_FRACTIONS, EvalReport, SeedResult, build_report, evaluate_model
from .meta_data import MetaDataset, apply_feature_stats, feature_stats, split
from .model import ImfasParams, ModelConfig, forward, init_model, model_backward
from .ranking_loss import RankPair, spearman_loss, spearman_loss_backward
from .softrank import SoftRankConfig, hard_rank

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "train_loss", "val_spearman", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 10
    learning_rate: float = 0.001
    seed: int = 0
    softrank_epsilon: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    encoder_hidden: int = 300
    hidden_size: int = 200
    lstm_layers: int = 2

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ConfigError("epochs must be a non-negative integer")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError("batch_size must be a positive integer")
        for name in ("learning_rate", "softrank_epsilon", "adam_eps", "grad_clip"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        for name in ("encoder_hidden", "hidden_size", "lstm_layers"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")

    @property
    def softrank(self) -> SoftRankConfig:
        return SoftRankConfig(self.softrank_epsilon)

    def model_config(self, n_features: int, n_algorithms: int) -> ModelConfig:
        return ModelConfig(n_features, n_algorithms, (self.encoder_hidden,), self.hidden_size, self.lstm_layers)


def config_hash(*objs) -> str:
    payload = json.dumps([asdict(o) if hasattr(o, "__dataclass_fields__") else o for o in objs],
                         sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_spearman: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    skipped_datasets: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for e, (loss, val, sec) in enumerate(zip(self.train_loss, self.val_spearman, self.seconds), start=1):
            w.writerow((e, repr(loss), repr(val), f"{sec:.6f}"))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        h = cls()
        for row in csv.DictReader(io.StringIO(text)):
            h.train_loss.append(float(row["train_loss"]))
            h.val_spearman.append(float(row["val_spearman"]))
            h.seconds.append(float(row["seconds"]))
        return h


class Adam:
    def __init__(self, params: Dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        step_size = self.lr / (1.0 - self.beta1 ** self.t)
        inv_c2 = 1.0 / math.sqrt(1.0 - self.beta2 ** self.t)
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            denom = np.sqrt(v)
            denom *= inv_c2
            denom += self.eps
            p -= step_size * (m / denom)


def clip_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def _training_arrays(ds: MetaDataset):
    """Inputs f_1..f_{n-1} as (M, n-1, A) and hard ranks of f_n as targets."""
    seq = np.ascontiguousarray(np.transpose(ds.performances[:, :, :-1], (0, 2, 1)))
    targets = np.stack([hard_rank(row, "descending") for row in ds.final_performances()])
    return seq, targets


def batch_loss_and_grad(params: ImfasParams, meta, seq, targets, sr_cfg: SoftRankConfig):
    """Mean Spearman-complement loss over a batch and its parameter gradients."""
    _, ranks, cache = forward(params, meta, seq, sr_cfg)
    B = ranks.shape[0]
    losses = np.empty(B)
    grad_ranks = np.empty_like(ranks)
    for b in range(B):
        pair = RankPair(ranks[b], targets[b])
        losses[b], lc = spearman_loss(pair)
        grad_ranks[b] = spearman_loss_backward(pair, lc) / B
    grads = model_backward(params, cache, grad_ranks)
    return losses, grads


def dataset_losses(params: ImfasParams, ds: MetaDataset, sr_cfg: SoftRankConfig) -> np.ndarray:
    seq, targets = _training_arrays(ds)
    _, ranks, _ = forward(params, ds.meta_features, seq, sr_cfg)
    return np.array([spearman_loss(RankPair(r, t))[0] for r, t in zip(ranks, targets)])


def _validation_spearman(params, ds_val, sr_cfg) -> float:
    ev = evaluate_model(params, ds_val, (1.0,), sr_cfg)
    vals = list(ev.per_fraction[repr(1.0)].values())
    return float(math.fsum(vals) / len(vals))


def train(ds_train: MetaDataset, cfg: TrainConfig, ds_val: MetaDataset | None = None,
          params: ImfasParams | None = None) -> Tuple[ImfasParams, TrainHistory]:
    """Meta-train on ``ds_train`` (meta-features are used as given).

    One epoch is one pass over the training datasets in a seeded random
    order. Each step feeds fidelities 1..n-1 and supervises the ranks of
    fidelity n. Datasets whose final fidelity is entirely tied carry no
    ranking signal and are skipped.
    """
    history = TrainHistory()
    final = ds_train.final_performances()
    keep = [d for d in range(ds_train.n_datasets) if np.ptp(final[d]) > 0.0]
    history.skipped_datasets = [ds_train.dataset_ids[d] for d in range(ds_train.n_datasets) if d not in keep]
    if history.skipped_datasets:
        log.warning("skipping %d datasets with tied final performances", len(history.skipped_datasets))
        ds_train = ds_train.subset(keep)
    if cfg.batch_size > ds_train.n_datasets:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds the {ds_train.n_datasets} training datasets")

    if params is None:
        params = init_model(cfg.model_config(ds_train.n_features, ds_train.n_algorithms), cfg.seed)
    else:
        params = params.copy()
    sr_cfg = cfg.softrank
    meta = ds_train.meta_features
    seq, targets = _training_arrays(ds_train)
    named = params.named()
    opt = Adam(named, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rng = np.random.default_rng([cfg.seed, 7919])
    M = ds_train.n_datasets

    if cfg.epochs:
        try:
            history.initial_loss = float(np.mean(dataset_losses(params, ds_train, sr_cfg)))
        except NumericError as exc:
            raise TrainingAbortedError(0, None, ds_train.dataset_ids, f"initial loss evaluation: {exc}") from exc
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(M)
        total = 0.0
        for b, start in enumerate(range(0, M, cfg.batch_size)):
            idx = np.sort(order[start:start + cfg.batch_size])
            try:
                losses, grads = batch_loss_and_grad(params, meta[idx], seq[idx], targets[idx], sr_cfg)
            except NumericError as exc:
                raise TrainingAbortedError(epoch, b, [ds_train.dataset_ids[i] for i in idx], str(exc)) from exc
            bad = ~np.isfinite(losses)
            if bad.any():
                raise TrainingAbortedError(epoch, b, [ds_train.dataset_ids[i] for i in idx[bad]])
            norm = clip_global_norm(grads, cfg.grad_clip)
            if not math.isfinite(norm):
                raise TrainingAbortedError(epoch, b, [ds_train.dataset_ids[i] for i in idx], "non-finite gradient")
            opt.step(grads)
            total += float(losses.sum())
        history.train_loss.append(total / M)
        history.val_spearman.append(_validation_spearman(params, ds_val, sr_cfg) if ds_val is not None else float("nan"))
        history.seconds.append(time.perf_counter() - t0)
        log.debug("epoch %d loss %.6f", epoch, history.train_loss[-1])
    return params, history


def env_threads(default: int | None = None) -> int:
    raw = os.environ.get("IMFAS_THREADS")
    if raw is None:
        return default if default is not None else (os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"IMFAS_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("IMFAS_THREADS must be at least 1")
    return n


@dataclass
class SeedRun:
    result: SeedResult
    params: ImfasParams
    history: TrainHistory
    feature_mean: np.ndarray
    feature_sd: np.ndarray


def run_seed(ds: MetaDataset, cfg: TrainConfig, seed: int, fractions=DEFAULT_FRACTIONS,
             sh_cfg: ShConfig = ShConfig(), test_fraction: float = 0.2) -> SeedRun:
    """Split, normalise with train statistics, train, then evaluate model and SH on the test split."""
    with threadpool_limits(limits=1):
        train_ds, test_ds = split(ds, test_fraction, seed)
        mean, sd = feature_stats(train_ds)
        train_ds = replace(train_ds, meta_features=apply_feature_stats(train_ds.meta_features, mean, sd))
        test_ds = replace(test_ds, meta_features=apply_feature_stats(test_ds.meta_features, mean, sd))
        params, history = train(train_ds, replace(cfg, seed=seed))
        model_eval = evaluate_model(params, test_ds, fractions, cfg.softrank)
        sh = sh_eval(test_ds, sh_cfg)
    summary = {
        "initial_loss": history.initial_loss,
        "final_loss": history.train_loss[-1] if len(history) else history.initial_loss,
        "epochs": len(history),
        "n_train": train_ds.n_datasets,
        "n_test": test_ds.n_datasets,
    }
    return SeedRun(SeedResult(seed, model_eval, sh, summary), params, history, mean, sd)


def run_seeds(ds: MetaDataset, cfg: TrainConfig, seeds: Sequence[int], fractions=DEFAULT_FRACTIONS,
              sh_cfg: ShConfig = ShConfig(), test_fraction: float = 0.2, name: str = "synthetic",
              workers: int | None = None, return_runs: bool = False):
    """Independent split/train/eval per seed, aggregated into one report row.

    Seeds may run in separate processes (``workers``, default from
    ``IMFAS_THREADS``); each run is a pure function of (data, config, seed),
    so the report does not depend on the worker count or seed order.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("at least one seed is required")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"duplicate seeds in {seeds}")
    workers = min(env_threads() if workers is None else workers, len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_seed, ds, cfg, s, fractions, sh_cfg, test_fraction) for s in seeds]
            runs = [f.result() for f in futures]
    else:
        runs = [run_seed(ds, cfg, s, fractions, sh_cfg, test_fraction) for s in seeds]
    report = build_report(
        name, fractions, [r.result for r in runs], config_hash(cfg, sh_cfg, {"test_fraction": test_fraction}),
        {"n_datasets": ds.n_datasets, "n_algorithms": ds.n_algorithms, "n_fidelities": ds.n_fidelities,
         "n_features": ds.n_features, "test_fraction": test_fraction},
    )
    return (report, runs) if return_runs else report
