"""Stacked LSTM with exact backpropagation through time.

Gate blocks are laid out ``(input i, forget f, cell g, output o)`` along the
first axis of ``w_ih``, ``w_hh`` and ``bias``; checkpoints rely on this order.
Like :mod:`imfas.nn_core`, vectors may carry a leading batch dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import CacheError, InputShapeError, SpecError
from .nn_core import GradStore, glorot_bound, sigmoid

FORGET_BIAS = 1.0


@dataclass
class LstmLayerParams:
    w_ih: np.ndarray  # (4d, in_dim)
    w_hh: np.ndarray  # (4d, d)
    bias: np.ndarray  # (4d,)

    def __post_init__(self):
        self.w_ih = np.asarray(self.w_ih, dtype=np.float64)
        self.w_hh = np.asarray(self.w_hh, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        d4 = self.w_hh.shape[0]
        if (
            d4 % 4
            or self.w_hh.shape != (d4, d4 // 4)
            or self.w_ih.ndim != 2
            or self.w_ih.shape[0] != d4
            or self.bias.shape != (d4,)
        ):
            raise SpecError(
                f"inconsistent LSTM shapes w_ih{self.w_ih.shape} "
                f"w_hh{self.w_hh.shape} bias{self.bias.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.w_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_ih.shape[1]

    def named(self, prefix: str = "") -> dict:
        return {f"{prefix}w_ih": self.w_ih, f"{prefix}w_hh": self.w_hh, f"{prefix}bias": self.bias}


@dataclass
class LstmState:
    h: List[np.ndarray] = field(default_factory=list)
    c: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros(cls, num_layers: int, hidden_size: int, batch: int | None = None) -> "LstmState":
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls([np.zeros(shape) for _ in range(num_layers)],
                   [np.zeros(shape) for _ in range(num_layers)])

    def copy(self) -> "LstmState":
        return LstmState([h.copy() for h in self.h], [c.copy() for c in self.c])


def init_lstm_layer(input_size: int, hidden_size: int, seed) -> LstmLayerParams:
    """Glorot-uniform weights per gate block, forget-gate bias 1, other biases 0."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if input_size <= 0 or hidden_size <= 0:
        raise SpecError("LSTM sizes must be positive")
    b_ih = glorot_bound(input_size, hidden_size)
    b_hh = glorot_bound(hidden_size, hidden_size)
    w_ih = rng.uniform(-b_ih, b_ih, size=(4 * hidden_size, input_size))
    w_hh = rng.uniform(-b_hh, b_hh, size=(4 * hidden_size, hidden_size))
    bias = np.zeros(4 * hidden_size)
    bias[hidden_size:2 * hidden_size] = FORGET_BIAS
    return LstmLayerParams(w_ih, w_hh, bias)


def init_lstm_stack(input_size: int, hidden_size: int, num_layers: int, seed) -> List[LstmLayerParams]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [
        init_lstm_layer(input_size if k == 0 else hidden_size, hidden_size, rng)
        for k in range(num_layers)
    ]


@dataclass
class CellCache:
    x: np.ndarray
    h: np.ndarray
    c: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray
    param_id: int


def _cell_step(params: LstmLayerParams, x, x_proj, h, c):
    d = params.hidden_size
    a = x_proj + h @ params.w_hh.T
    i = sigmoid(a[..., :d])
    f = sigmoid(a[..., d:2 * d])
    g = np.tanh(a[..., 2 * d:3 * d])
    o = sigmoid(a[..., 3 * d:])
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    return o * tanh_c, c_new, CellCache(x, h, c, i, f, g, o, tanh_c, id(params.w_ih))


def cell_forward(params: LstmLayerParams, x, state) -> Tuple[Tuple[np.ndarray, np.ndarray], CellCache]:
    h, c = state
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if x.shape[-1] != params.input_size:
        raise InputShapeError(f"LSTM input dim {x.shape[-1]}, expected {params.input_size}")
    if h.shape[-1] != params.hidden_size or c.shape != h.shape:
        raise InputShapeError(f"LSTM state shapes h{h.shape} c{c.shape}, hidden size {params.hidden_size}")
    h_new, c_new, cache = _cell_step(params, x, x @ params.w_ih.T + params.bias, h, c)
    return (h_new, c_new), cache


def _gate_grads(cache: CellCache, grad_h, grad_c):
    dc = grad_c + grad_h * cache.o * (1.0 - cache.tanh_c ** 2)
    di = dc * cache.g * cache.i * (1.0 - cache.i)
    df = dc * cache.c * cache.f * (1.0 - cache.f)
    dg = dc * cache.i * (1.0 - cache.g ** 2)
    do = grad_h * cache.tanh_c * cache.o * (1.0 - cache.o)
    return np.concatenate([di, df, dg, do], axis=-1), dc * cache.f


def _check_cache(params: LstmLayerParams, cache: CellCache):
    if not isinstance(cache, CellCache) or cache.param_id != id(params.w_ih) \
            or cache.h.shape[-1] != params.hidden_size:
        raise CacheError("LSTM cache does not match these parameters")


def cell_backward(params: LstmLayerParams, cache: CellCache, grad_h, grad_c):
    """Returns ``(grads, grad_x, grad_h_prev, grad_c_prev)``; grads keyed w_ih/w_hh/bias."""
    _check_cache(params, cache)
    grad_h = np.asarray(grad_h, dtype=np.float64)
    grad_c = np.asarray(grad_c, dtype=np.float64)
    da, grad_c_prev = _gate_grads(cache, grad_h, grad_c)
    if da.ndim == 1:
        grads = {"w_ih": np.outer(da, cache.x), "w_hh": np.outer(da, cache.h), "bias": da.copy()}
    else:
        grads = {"w_ih": da.T @ cache.x, "w_hh": da.T @ cache.h, "bias": da.sum(axis=0)}
    return grads, da @ params.w_ih, da @ params.w_hh, grad_c_prev


def _check_stack(stack: Sequence[LstmLayerParams]):
    if not stack:
        raise SpecError("empty LSTM stack")
    d = stack[0].hidden_size
    for k, layer in enumerate(stack):
        if layer.hidden_size != d:
            raise SpecError("all LSTM layers must share one hidden size")
        if k and layer.input_size != d:
            raise SpecError(f"layer {k} input size {layer.input_size} != hidden size {d}")


def _project(x_seq: np.ndarray, layer: LstmLayerParams) -> np.ndarray:
    """Input projection of a whole sequence.

    A single unbatched step is padded to two rows so BLAS takes the same
    matrix-matrix path as longer sequences; otherwise a 1-step unroll would
    round differently from the first step of a longer one.
    """
    if x_seq.ndim == 2 and x_seq.shape[0] == 1:
        return (np.concatenate([x_seq, x_seq]) @ layer.w_ih.T)[:1] + layer.bias
    return x_seq @ layer.w_ih.T + layer.bias


def unroll(stack: Sequence[LstmLayerParams], init: LstmState, inputs):
    """Run the stack over ``inputs``; layer k>0 consumes layer k-1's h.

    Returns ``(states, caches)`` where ``states[t]`` is the full state after
    step t and ``caches[t][k]`` the cell cache of layer k at step t. An empty
    input sequence yields ``([], [])``; the final state is then ``init``.
    Layers are processed one at a time over the whole sequence so the input
    projections can be done in a single matrix product per layer.
    """
    _check_stack(stack)
    if len(init.h) != len(stack) or len(init.c) != len(stack):
        raise InputShapeError(f"initial state has {len(init.h)} layers, stack has {len(stack)}")
    width = stack[0].input_size
    xs = [np.asarray(x, dtype=np.float64) for x in inputs]
    for t, x in enumerate(xs):
        if x.shape[-1] != width:
            raise InputShapeError(f"input step {t} has dim {x.shape[-1]}, expected {width}")
    T = len(xs)
    if T == 0:
        return [], []
    for k, layer in enumerate(stack):
        if init.h[k].shape[-1] != layer.hidden_size or init.c[k].shape != init.h[k].shape:
            raise InputShapeError(f"initial state of layer {k} does not match hidden size {layer.hidden_size}")
    hs = [[None] * len(stack) for _ in range(T)]
    cs = [[None] * len(stack) for _ in range(T)]
    caches = [[None] * len(stack) for _ in range(T)]
    for k, layer in enumerate(stack):
        proj = _project(np.stack(xs), layer)
        h, c = init.h[k], init.c[k]
        for t in range(T):
            h, c, caches[t][k] = _cell_step(layer, xs[t], proj[t], h, c)
            hs[t][k] = h
            cs[t][k] = c
        xs = [hs[t][k] for t in range(T)]
    states = [LstmState(hs[t], cs[t]) for t in range(T)]
    return states, caches


def final_state(init: LstmState, states: Sequence[LstmState]) -> LstmState:
    return states[-1] if states else init


def unroll_backward(stack: Sequence[LstmLayerParams], caches, grad_final: LstmState,
                    grad_top_h=None):
    """Backpropagation through time.

    ``grad_final`` holds dL/dh and dL/dc of every layer at the last step;
    ``grad_top_h`` optionally adds per-step gradients on the top layer's h.
    Returns ``(grads, grad_inputs, grad_init)`` with grads keyed
    ``"{layer}.w_ih"`` etc. and summed over time (and batch).
    """
    _check_stack(stack)
    n_layers = len(stack)
    if len(grad_final.h) != n_layers or len(grad_final.c) != n_layers:
        raise CacheError("gradient state does not match stack depth")
    T = len(caches)
    grads: GradStore = {}
    if T == 0:
        for k, layer in enumerate(stack):
            grads[f"{k}.w_ih"] = np.zeros_like(layer.w_ih)
            grads[f"{k}.w_hh"] = np.zeros_like(layer.w_hh)
            grads[f"{k}.bias"] = np.zeros_like(layer.bias)
        return grads, [], LstmState(list(grad_final.h), list(grad_final.c))
    for t in range(T):
        if len(caches[t]) != n_layers:
            raise CacheError(f"step {t} cache has {len(caches[t])} layers, stack has {n_layers}")
    extra = None if grad_top_h is None else [np.asarray(g, dtype=np.float64) for g in grad_top_h]
    grad_init_h = [None] * n_layers
    grad_init_c = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        layer = stack[k]
        gh = np.asarray(grad_final.h[k], dtype=np.float64)
        gc = np.asarray(grad_final.c[k], dtype=np.float64)
        das = [None] * T
        for t in range(T - 1, -1, -1):
            cache = caches[t][k]
            _check_cache(layer, cache)
            if extra is not None:
                gh = gh + extra[t]
            das[t], gc = _gate_grads(cache, gh, gc)
            gh = das[t] @ layer.w_hh
        grad_init_h[k], grad_init_c[k] = gh, gc
        da = np.stack(das)
        extra = list(da @ layer.w_ih)  # dL/d(input of this layer) per step
        da2 = da.reshape(-1, da.shape[-1])
        xs = np.stack([caches[t][k].x for t in range(T)])
        hs = np.stack([caches[t][k].h for t in range(T)])
        grads[f"{k}.w_ih"] = da2.T @ xs.reshape(-1, xs.shape[-1])
        grads[f"{k}.w_hh"] = da2.T @ hs.reshape(-1, hs.shape[-1])
        grads[f"{k}.bias"] = da2.sum(axis=0)
    grads = {f"{k}.{name}": grads[f"{k}.{name}"] for k in range(n_layers) for name in ("w_ih", "w_hh", "bias")}
    return grads, extra, LstmState(grad_init_h, grad_init_c)
