"""Meta-dataset container, CSV ingestion/export, synthetic generator and splits.

Long-format curves CSV::

    dataset_id,algorithm_id,fidelity_index,performance

Meta-features CSV::

    dataset_id,f_0,...,f_{F-1}

Identifiers are kept as strings and sorted lexicographically, which fixes the
row ordering of the dense tensors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, Sequence, Tuple

import numpy as np
import yaml

from .errors import ConfigError, IncompleteGridError, SpecError, SplitError, ValidationError

CURVES_HEADER = ("dataset_id", "algorithm_id", "fidelity_index", "performance")
CURVES_FILE = "curves.csv"
META_FILE = "meta_features.csv"


def _readonly(arr) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MetaDataset:
    """Dense (datasets x algorithms x fidelities) grid plus meta-features."""

    meta_features: np.ndarray  # (M, F)
    performances: np.ndarray  # (M, A, n)
    fidelity_grid: np.ndarray  # (n,)
    algorithm_ids: Tuple[str, ...]
    dataset_ids: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "meta_features", _readonly(self.meta_features))
        object.__setattr__(self, "performances", _readonly(self.performances))
        object.__setattr__(self, "fidelity_grid", _readonly(self.fidelity_grid))
        object.__setattr__(self, "algorithm_ids", tuple(str(a) for a in self.algorithm_ids))
        object.__setattr__(self, "dataset_ids", tuple(str(d) for d in self.dataset_ids))
        validate(self)

    @property
    def n_datasets(self) -> int:
        return self.performances.shape[0]

    @property
    def n_algorithms(self) -> int:
        return self.performances.shape[1]

    @property
    def n_fidelities(self) -> int:
        return self.performances.shape[2]

    @property
    def n_features(self) -> int:
        return self.meta_features.shape[1]

    def subset(self, indices: Sequence[int]) -> "MetaDataset":
        idx = np.asarray(indices, dtype=int)
        return MetaDataset(
            self.meta_features[idx],
            self.performances[idx],
            self.fidelity_grid,
            self.algorithm_ids,
            tuple(self.dataset_ids[i] for i in idx),
        )

    def final_performances(self) -> np.ndarray:
        return self.performances[:, :, -1]


def validate(ds: MetaDataset) -> None:
    """Raise :class:`ValidationError` locating the first bad value."""
    perf, meta, grid = ds.performances, ds.meta_features, ds.fidelity_grid
    if perf.ndim != 3:
        raise ValidationError(f"performances must be 3-d, got shape {perf.shape}")
    M, A, n = perf.shape
    if meta.ndim != 2 or meta.shape[0] != M:
        raise ValidationError(f"meta-features shape {meta.shape} does not match {M} datasets")
    if len(ds.dataset_ids) != M or len(set(ds.dataset_ids)) != M:
        raise ValidationError("dataset ids must be unique and one per dataset")
    if len(ds.algorithm_ids) != A or len(set(ds.algorithm_ids)) != A:
        raise ValidationError("algorithm ids must be unique and one per algorithm")
    if grid.shape != (n,):
        raise ValidationError(f"fidelity grid has {grid.shape} labels for {n} fidelities")
    if n < 2:
        raise ValidationError("need at least two fidelities")
    if A < 2:
        raise ValidationError("need at least two algorithms")
    if not np.isfinite(grid).all() or np.any(np.diff(grid) <= 0):
        raise ValidationError("fidelity grid must be finite and strictly increasing")
    bad = ~np.isfinite(perf) | (perf < 0.0) | (perf > 1.0)
    if bad.any():
        d, a, k = (int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(
            f"performance {perf[d, a, k]!r} outside [0, 1] or non-finite at "
            f"(dataset_id={ds.dataset_ids[d]!r}, algorithm_id={ds.algorithm_ids[a]!r}, fidelity_index={k})"
        )
    bad = ~np.isfinite(meta)
    if bad.any():
        d, f = (int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(f"non-finite meta-feature f_{f} for dataset_id={ds.dataset_ids[d]!r}")


def _fmt(x: float) -> str:
    return repr(float(x))


def save_csv(ds: MetaDataset, out_dir) -> Tuple[Path, Path]:
    """Write ``curves.csv`` and ``meta_features.csv``; floats use shortest round-trip repr."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curves_path = out / CURVES_FILE
    meta_path = out / META_FILE
    with open(curves_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVES_HEADER)
        for d, did in enumerate(ds.dataset_ids):
            for a, aid in enumerate(ds.algorithm_ids):
                for k in range(ds.n_fidelities):
                    w.writerow((did, aid, k, _fmt(ds.performances[d, a, k])))
    with open(meta_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dataset_id", *(f"f_{j}" for j in range(ds.n_features))))
        for d, did in enumerate(ds.dataset_ids):
            w.writerow((did, *(_fmt(v) for v in ds.meta_features[d])))
    return curves_path, meta_path


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"cannot parse number {text!r} at {where}") from None


def load_csv(curves_path, meta_path) -> MetaDataset:
    with open(curves_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CURVES_HEADER:
            raise ValidationError(f"{curves_path}: header must be {','.join(CURVES_HEADER)}")
        cells: Dict[Tuple[str, str, int], float] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValidationError(f"{curves_path}:{lineno}: expected 4 fields, got {len(row)}")
            did, aid, k_text, p_text = row
            try:
                k = int(k_text)
            except ValueError:
                raise ValidationError(f"{curves_path}:{lineno}: fidelity_index {k_text!r} is not an integer") from None
            if k < 0:
                raise ValidationError(f"{curves_path}:{lineno}: negative fidelity_index {k}")
            key = (did, aid, k)
            if key in cells:
                raise ValidationError(f"{curves_path}:{lineno}: duplicate cell {key}")
            cells[key] = _parse_float(p_text, f"{curves_path}:{lineno}")

    with open(meta_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "dataset_id" or len(header) < 2:
            raise ValidationError(f"{meta_path}: header must be dataset_id,f_0,...")
        n_feat = len(header) - 1
        meta_rows: Dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_feat + 1:
                raise ValidationError(f"{meta_path}:{lineno}: expected {n_feat + 1} fields, got {len(row)}")
            if row[0] in meta_rows:
                raise ValidationError(f"{meta_path}:{lineno}: duplicate dataset_id {row[0]!r}")
            meta_rows[row[0]] = [_parse_float(v, f"{meta_path}:{lineno}") for v in row[1:]]

    if not cells:
        raise ValidationError(f"{curves_path}: no data rows")
    dataset_ids = sorted({k[0] for k in cells})
    algorithm_ids = sorted({k[1] for k in cells})
    n = max(k[2] for k in cells) + 1
    perf = np.empty((len(dataset_ids), len(algorithm_ids), n))
    for d, did in enumerate(dataset_ids):
        for a, aid in enumerate(algorithm_ids):
            for k in range(n):
                try:
                    perf[d, a, k] = cells[(did, aid, k)]
                except KeyError:
                    raise IncompleteGridError(did, aid, k) from None
    missing = [did for did in dataset_ids if did not in meta_rows]
    if missing:
        raise ValidationError(f"{meta_path}: no meta-features for dataset_id={missing[0]!r}")
    meta = np.array([meta_rows[did] for did in dataset_ids], dtype=np.float64).reshape(len(dataset_ids), n_feat)
    return MetaDataset(meta, perf, np.arange(1, n + 1, dtype=np.float64), tuple(algorithm_ids), tuple(dataset_ids))


def load_dir(data_dir) -> MetaDataset:
    data_dir = Path(data_dir)
    return load_csv(data_dir / CURVES_FILE, data_dir / META_FILE)


# synthetic generator

@dataclass(frozen=True)
class SyntheticSpec:
    n_datasets: int = 200
    n_algorithms: int = 20
    n_fidelities: int = 10
    n_features: int = 8
    latent_dim: int = 4
    noise_sd: float = 0.01
    crossing_fraction: float = 0.4
    seed: int = 0
    rate_scale: float = 1.0

    def __post_init__(self):
        for name in ("n_datasets", "n_algorithms", "n_fidelities", "n_features", "latent_dim"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise SpecError(f"{name} must be a positive integer")
        if self.n_fidelities < 2:
            raise SpecError("n_fidelities must be at least 2")
        if self.n_algorithms < 2:
            raise SpecError("n_algorithms must be at least 2")
        if self.latent_dim > self.n_features:
            raise SpecError("latent_dim must not exceed n_features")
        if not self.noise_sd >= 0:
            raise SpecError("noise_sd must be non-negative")
        if not 0.0 <= self.crossing_fraction <= 1.0:
            raise SpecError("crossing_fraction must lie in [0, 1]")
        if not self.rate_scale > 0:
            raise SpecError("rate_scale must be positive")


def load_synthetic_spec(path) -> SyntheticSpec:
    return SyntheticSpec(**read_flat_config(path, SyntheticSpec))


def read_flat_config(path, cls) -> dict:
    """Parse a flat YAML mapping and check its keys against dataclass ``cls``."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a flat key-value mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}; allowed: {sorted(known)}")
    for k, v in data.items():
        if isinstance(v, (dict, list)) and not (k == "encoder_hidden" and isinstance(v, list)):
            raise ConfigError(f"{path}: key {k!r} must hold a scalar")
    return data


def write_flat_config(path, obj) -> None:
    Path(path).write_text(yaml.safe_dump(_plain(asdict(obj)), sort_keys=True), encoding="utf-8")


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_synthetic(spec: SyntheticSpec) -> MetaDataset:
    """Exponential-saturation learning curves with planted rank crossings.

    Each dataset has a latent topology ``z_d`` and each algorithm an
    inductive-bias vector ``w_a``; the asymptote is
    ``sigmoid(z_d . w_a + b_a + e_da)``. A ``crossing_fraction`` of the
    algorithms are late bloomers: slow rates but boosted asymptotes, so their
    early-fidelity ranks understate their final ranks. Meta-features are a
    noisy linear readout of ``z_d``.
    """
    rng = np.random.default_rng(spec.seed)
    M, A, n, F, L = spec.n_datasets, spec.n_algorithms, spec.n_fidelities, spec.n_features, spec.latent_dim

    z = rng.normal(size=(M, L))
    w = rng.normal(scale=1.0 / math.sqrt(L), size=(A, L))
    b = rng.normal(scale=0.5, size=A)
    interaction = rng.normal(scale=0.5, size=(M, A))
    logits = z @ w.T + b + interaction

    n_cross = int(round(spec.crossing_fraction * A))
    crossing = np.zeros(A, dtype=bool)
    crossing[rng.permutation(A)[:n_cross]] = True

    # per-(dataset, algorithm) rates: fast for regular algorithms, slow for late bloomers
    log_rate = np.where(crossing, math.log(0.12), math.log(0.9)) + rng.normal(scale=0.25, size=(M, A))
    rate = spec.rate_scale * np.exp(log_rate)
    logits = logits + np.where(crossing, 1.5, 0.0)
    p_inf = _sig(logits)
    start_frac = np.where(crossing, rng.uniform(0.1, 0.3, size=(M, A)), rng.uniform(0.2, 0.7, size=(M, A)))
    p0 = start_frac * p_inf

    k = np.arange(1, n + 1, dtype=np.float64)
    with np.errstate(under="ignore"):
        decay = np.exp(-rate[:, :, None] * k[None, None, :])
    perf = p_inf[:, :, None] - (p_inf - p0)[:, :, None] * decay
    perf = perf + rng.normal(scale=spec.noise_sd, size=perf.shape) if spec.noise_sd > 0 else perf
    perf = np.clip(perf, 0.0, 1.0)

    readout = rng.normal(size=(L, F))
    meta = z @ readout
    if spec.noise_sd > 0:
        meta = meta + rng.normal(scale=spec.noise_sd, size=meta.shape)

    width_d = len(str(M - 1))
    width_a = len(str(A - 1))
    return MetaDataset(
        meta,
        perf,
        k,
        tuple(f"a{i:0{width_a}d}" for i in range(A)),
        tuple(f"d{i:0{width_d}d}" for i in range(M)),
    )


def normalize_meta_features(train: MetaDataset, apply_to: MetaDataset | None = None) -> MetaDataset:
    """Z-score meta-features with the train statistics; constant features map to 0."""
    mean, sd = feature_stats(train)
    target = train if apply_to is None else apply_to
    return replace(target, meta_features=apply_feature_stats(target.meta_features, mean, sd))


def feature_stats(train: MetaDataset) -> Tuple[np.ndarray, np.ndarray]:
    if train.n_datasets < 2:
        raise ValidationError("normalisation needs at least two training datasets")
    return train.meta_features.mean(axis=0), train.meta_features.std(axis=0)


def apply_feature_stats(meta, mean, sd) -> np.ndarray:
    meta = np.asarray(meta, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    if meta.shape[-1] != mean.shape[0]:
        raise ValidationError(f"{meta.shape[-1]} meta-features, statistics for {mean.shape[0]}")
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(mean))
    safe = np.where(const, 1.0, sd)
    return np.where(const, 0.0, (meta - mean) / safe)


def split(ds: MetaDataset, test_fraction: float = 0.2, seed=0) -> Tuple[MetaDataset, MetaDataset]:
    """Dataset-level random split; the test side gets ``round(test_fraction * M)`` datasets."""
    if not 0.0 < test_fraction < 1.0:
        raise SplitError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    M = ds.n_datasets
    n_test = int(round(test_fraction * M))
    if n_test < 1 or M - n_test < 1:
        raise SplitError(f"test_fraction {test_fraction} leaves an empty side for {M} datasets")
    perm = np.random.default_rng(seed).permutation(M)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return ds.subset(train_idx), ds.subset(test_idx)
