"""Meta-feature encoder -> stacked LSTM over fidelity vectors -> readout -> soft ranks.

The encoder output initialises ``h`` of every LSTM layer (cells start at 0).
At training time the LSTM consumes fidelities ``f_1 .. f_{n-1}`` and the
readout of the final top-layer ``h`` is ranked against the ranks of ``f_n``.
At test time the same parameters are unrolled over a prefix only.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import CacheError, InputShapeError, InsufficientFidelityError, SpecError, ValidationError
from .lstm import LstmLayerParams, LstmState, final_state, init_lstm_stack, unroll, unroll_backward
from .nn_core import DenseLayer, GradStore, MlpSpec, init_params, mlp_backward, mlp_forward
from .softrank import SoftRankConfig, soft_rank, soft_rank_backward

CHECKPOINT_FORMAT = "imfas-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    n_features: int
    n_algorithms: int
    encoder_hidden: Tuple[int, ...] = (300,)
    hidden_size: int = 200
    num_layers: int = 2

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(d) for d in self.encoder_hidden))
        if self.n_features < 1 or self.n_algorithms < 2:
            raise SpecError("need at least one meta-feature and two algorithms")
        if self.hidden_size < 1 or self.num_layers < 1:
            raise SpecError("LSTM hidden size and layer count must be positive")

    @property
    def encoder_spec(self) -> MlpSpec:
        return MlpSpec.relu_hidden((self.n_features, *self.encoder_hidden, self.hidden_size))

    @property
    def readout_spec(self) -> MlpSpec:
        return MlpSpec.relu_hidden((self.hidden_size, self.n_algorithms))


@dataclass
class ImfasParams:
    config: ModelConfig
    encoder: List[DenseLayer]
    lstm: List[LstmLayerParams]
    readout: List[DenseLayer]

    def named(self) -> Dict[str, np.ndarray]:
        """Ordered name -> array mapping; arrays are the live parameter tensors."""
        out: Dict[str, np.ndarray] = {}
        for k, layer in enumerate(self.encoder):
            out[f"encoder.{k}.weights"] = layer.weights
            out[f"encoder.{k}.bias"] = layer.bias
        for k, layer in enumerate(self.lstm):
            out.update(layer.named(f"lstm.{k}."))
        for k, layer in enumerate(self.readout):
            out[f"readout.{k}.weights"] = layer.weights
            out[f"readout.{k}.bias"] = layer.bias
        return out

    def copy(self) -> "ImfasParams":
        return ImfasParams(
            self.config,
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.encoder],
            [LstmLayerParams(l.w_ih.copy(), l.w_hh.copy(), l.bias.copy()) for l in self.lstm],
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.readout],
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.named().values())


def init_model(config: ModelConfig, seed) -> ImfasParams:
    rng = np.random.default_rng(seed)
    encoder = init_params(config.encoder_spec, rng)
    lstm = init_lstm_stack(config.n_algorithms, config.hidden_size, config.num_layers, rng)
    readout = init_params(config.readout_spec, rng)
    return ImfasParams(config, encoder, lstm, readout)


@dataclass
class PartialObservation:
    meta_features: np.ndarray
    fidelity_seq: List[np.ndarray] = field(default_factory=list)

    @property
    def g(self) -> int:
        return len(self.fidelity_seq)


@dataclass
class RankingPrediction:
    scores: np.ndarray
    soft_ranks: np.ndarray


@dataclass
class ModelCache:
    encoder: object
    h0: np.ndarray
    lstm_init: LstmState
    lstm_caches: list
    readout: object
    softrank: list
    batched: bool
    params_id: int


def _as_steps(fidelity, batch: int | None, n_alg: int) -> List[np.ndarray]:
    if fidelity is None:
        return []
    if isinstance(fidelity, np.ndarray):
        arr = np.asarray(fidelity, dtype=np.float64)
        # (g, A) for a single observation, (B, g, A) for a batch
        if batch is None:
            if arr.size == 0:
                return []
            if arr.ndim != 2:
                raise InputShapeError(f"fidelity sequence must be (g, |A|), got {arr.shape}")
            steps = [arr[t] for t in range(arr.shape[0])]
        else:
            if arr.ndim != 3 or arr.shape[0] != batch:
                raise InputShapeError(f"batched fidelity sequence must be (B, g, |A|), got {arr.shape}")
            steps = [arr[:, t, :] for t in range(arr.shape[1])]
    else:
        steps = [np.asarray(s, dtype=np.float64) for s in fidelity]
    for t, s in enumerate(steps):
        if s.shape[-1] != n_alg:
            raise InputShapeError(f"fidelity step {t} has {s.shape[-1]} entries, expected |A|={n_alg}")
        if not np.isfinite(s).all():
            raise ValidationError(f"fidelity step {t} contains non-finite values")
    return steps


def forward(params: ImfasParams, meta_features, fidelity_seq, cfg: SoftRankConfig = SoftRankConfig()):
    """Batched or single forward pass.

    ``meta_features`` is ``(F,)`` or ``(B, F)``; ``fidelity_seq`` is
    ``(g, |A|)`` / ``(B, g, |A|)`` or a list of per-step arrays. Returns
    ``(scores, soft_ranks, cache)``.
    """
    conf = params.config
    meta = np.asarray(meta_features, dtype=np.float64)
    if meta.ndim not in (1, 2) or meta.shape[-1] != conf.n_features:
        raise InputShapeError(f"meta-features shape {meta.shape}, expected F={conf.n_features}")
    batched = meta.ndim == 2
    steps = _as_steps(fidelity_seq, meta.shape[0] if batched else None, conf.n_algorithms)

    h0, enc_cache = mlp_forward(conf.encoder_spec, params.encoder, meta)
    init = LstmState([h0] * conf.num_layers, [np.zeros_like(h0) for _ in range(conf.num_layers)])
    states, lstm_caches = unroll(params.lstm, init, steps)
    h_top = final_state(init, states).h[-1]
    scores, ro_cache = mlp_forward(conf.readout_spec, params.readout, h_top)

    if batched:
        pairs = [soft_rank(row, cfg) for row in scores]
        ranks = np.stack([p[0] for p in pairs])
        sr_caches = [p[1] for p in pairs]
    else:
        ranks, c = soft_rank(scores, cfg)
        sr_caches = [c]
    cache = ModelCache(enc_cache, h0, init, lstm_caches, ro_cache, sr_caches, batched, id(params))
    return scores, ranks, cache


def model_forward(params: ImfasParams, obs: PartialObservation, cfg: SoftRankConfig = SoftRankConfig()):
    scores, ranks, cache = forward(params, obs.meta_features, obs.fidelity_seq, cfg)
    return RankingPrediction(scores, ranks), cache


def model_backward(params: ImfasParams, cache: ModelCache, loss_grad, wrt: str = "ranks") -> GradStore:
    """Gradients of every parameter given dL/d(soft ranks) (or dL/d(scores) with ``wrt="scores"``)."""
    if not isinstance(cache, ModelCache) or cache.params_id != id(params):
        raise CacheError("model cache was produced with different parameters")
    conf = params.config
    g = np.asarray(loss_grad, dtype=np.float64)
    if wrt == "ranks":
        if cache.batched:
            if g.shape != (len(cache.softrank), conf.n_algorithms):
                raise CacheError(f"loss gradient shape {g.shape} does not match the batch")
            g = np.stack([soft_rank_backward(c, row) for c, row in zip(cache.softrank, g)])
        else:
            g = soft_rank_backward(cache.softrank[0], g)
    elif wrt != "scores":
        raise ValueError("wrt must be 'ranks' or 'scores'")

    ro_grads, g_htop = mlp_backward(conf.readout_spec, params.readout, cache.readout, g)
    L = conf.num_layers
    zeros = np.zeros_like(cache.h0)
    grad_final = LstmState([zeros] * (L - 1) + [g_htop], [zeros] * L)
    lstm_grads, _, grad_init = unroll_backward(params.lstm, cache.lstm_caches, grad_final)
    g_h0 = grad_init.h[0]
    for gh in grad_init.h[1:]:
        g_h0 = g_h0 + gh
    enc_grads, _ = mlp_backward(conf.encoder_spec, params.encoder, cache.encoder, g_h0)

    out: GradStore = {}
    for k, v in enc_grads.items():
        out[f"encoder.{k}"] = v
    for k, v in lstm_grads.items():
        out[f"lstm.{k}"] = v
    for k, v in ro_grads.items():
        out[f"readout.{k}"] = v
    return {name: out[name] for name in params.named()}


def fidelity_steps(n_fidelities: int, fraction: float) -> int:
    """Number of LSTM steps consumed at ``fraction`` of the ``n - 1`` input fidelities."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    if n_fidelities < 2:
        raise InsufficientFidelityError("need at least two fidelities")
    # tolerance absorbs products like 0.3 * 10 = 2.9999999999999996
    return min(n_fidelities - 1, int(math.floor(fraction * (n_fidelities - 1) + 1e-9)))


def predict_partial(params: ImfasParams, meta_features, curves, fraction: float,
                    cfg: SoftRankConfig = SoftRankConfig()) -> RankingPrediction:
    """Rank prediction from the first ``floor(fraction * (n-1))`` fidelity columns.

    ``curves`` is the ``(|A|, n)`` matrix of full learning curves of one
    dataset; the last column is never read.
    """
    curves = np.asarray(curves, dtype=np.float64)
    if curves.ndim != 2 or curves.shape[0] != params.config.n_algorithms:
        raise InputShapeError(f"curves must be (|A|={params.config.n_algorithms}, n), got {curves.shape}")
    g = fidelity_steps(curves.shape[1], fraction)
    seq = curves[:, :g].T
    pred, _ = model_forward(params, PartialObservation(np.asarray(meta_features, dtype=np.float64), list(seq)), cfg)
    return pred


def predict_partial_batch(params: ImfasParams, meta_features, performances, fraction: float,
                          cfg: SoftRankConfig = SoftRankConfig()) -> np.ndarray:
    """Scores for many datasets at once; ``performances`` is ``(M, |A|, n)``."""
    perf = np.asarray(performances, dtype=np.float64)
    g = fidelity_steps(perf.shape[2], fraction)
    scores, _, _ = forward(params, meta_features, np.transpose(perf[:, :, :g], (0, 2, 1)), cfg)
    return scores


# checkpoint I/O

def _encode(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return {"shape": list(arr.shape), "dtype": "<f8", "data": base64.b64encode(data).decode("ascii")}


def _decode(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype=entry["dtype"]).astype(np.float64).reshape(entry["shape"])


def checkpoint_dict(params: ImfasParams, metadata: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": {**asdict(params.config), "encoder_hidden": list(params.config.encoder_hidden),
                  "gate_order": "i,f,g,o"},
        "metadata": metadata or {},
        "tensors": {name: _encode(arr) for name, arr in params.named().items()},
    }


def save_checkpoint(path, params: ImfasParams, metadata: dict | None = None) -> None:
    text = json.dumps(checkpoint_dict(params, metadata), indent=1, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def params_from_dict(payload: dict) -> Tuple[ImfasParams, dict]:
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError("not an IMFAS checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {payload.get('version')}")
    m = payload["model"]
    config = ModelConfig(m["n_features"], m["n_algorithms"], tuple(m["encoder_hidden"]),
                         m["hidden_size"], m["num_layers"])
    params = init_model(config, 0)
    tensors = payload["tensors"]
    for name, arr in params.named().items():
        if name not in tensors:
            raise ValidationError(f"checkpoint lacks tensor {name}")
        value = _decode(tensors[name])
        if value.shape != arr.shape:
            raise ValidationError(f"tensor {name}: shape {value.shape}, expected {arr.shape}")
        arr[...] = value
    return params, payload.get("metadata", {})


def load_checkpoint(path) -> Tuple[ImfasParams, dict]:
    return params_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
