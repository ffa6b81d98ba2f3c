"""Dense layers, MLP forward/backward and a finite-difference gradient oracle.

Everything works in float64 and accepts either a single vector ``(in_dim,)``
or a row batch ``(batch, in_dim)``. Weights are stored ``(out_dim, in_dim)``
so a layer computes ``act(x @ W.T + b)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from .errors import CacheError, InputShapeError, NumericError, SpecError

GradStore = Dict[str, np.ndarray]

ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid")


def sigmoid(x):
    # tanh form is overflow-free and a single ufunc pass
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return sigmoid(z)
    raise SpecError(f"unknown activation {name!r}")


def activate_grad(name: str, z: np.ndarray, a: np.ndarray, grad_a: np.ndarray) -> np.ndarray:
    """Pull ``grad_a`` back through the activation given pre (z) and post (a) values."""
    if name == "identity":
        return grad_a
    if name == "relu":
        return grad_a * (z > 0)
    if name == "tanh":
        return grad_a * (1.0 - a * a)
    if name == "sigmoid":
        return grad_a * a * (1.0 - a)
    raise SpecError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise SpecError(
                f"inconsistent dense layer shapes W{self.weights.shape} b{self.bias.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.weights).all() and np.isfinite(self.bias).all())


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: Tuple[int, ...]
    activations: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.layer_dims) < 2:
            raise SpecError("an MLP needs at least an input and an output dimension")
        if len(self.activations) != len(self.layer_dims) - 1:
            raise SpecError(
                f"{len(self.layer_dims) - 1} layer transitions but "
                f"{len(self.activations)} activations"
            )
        if any(d <= 0 for d in self.layer_dims):
            raise SpecError(f"zero-width layer in {self.layer_dims}")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise SpecError(f"unknown activation {a!r}")

    @classmethod
    def relu_hidden(cls, layer_dims: Sequence[int]) -> "MlpSpec":
        """ReLU on hidden layers, identity on the output layer."""
        k = len(layer_dims) - 1
        return cls(tuple(layer_dims), ("relu",) * (k - 1) + ("identity",))


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(spec: MlpSpec, seed) -> List[DenseLayer]:
    """Uniform Glorot weights, zero biases. ``seed`` may also be a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for d_in, d_out, act in zip(spec.layer_dims[:-1], spec.layer_dims[1:], spec.activations):
        bound = glorot_bound(d_in, d_out)
        w = rng.uniform(-bound, bound, size=(d_out, d_in))
        layers.append(DenseLayer(w, np.zeros(d_out), act))
    return layers


@dataclass
class MlpCache:
    inputs: List[np.ndarray]
    pre: List[np.ndarray]
    post: List[np.ndarray]
    param_ids: Tuple[int, ...]


def _check_layers(spec: MlpSpec, params: Sequence[DenseLayer]):
    if len(params) != len(spec.activations):
        raise SpecError(f"spec has {len(spec.activations)} layers, params have {len(params)}")
    for k, layer in enumerate(params):
        expected = (spec.layer_dims[k + 1], spec.layer_dims[k])
        if layer.weights.shape != expected:
            raise SpecError(f"layer {k}: weights {layer.weights.shape}, expected {expected}")


def mlp_forward(spec: MlpSpec, params: Sequence[DenseLayer], x) -> Tuple[np.ndarray, MlpCache]:
    _check_layers(spec, params)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != spec.layer_dims[0]:
        raise InputShapeError(
            f"MLP input has shape {x.shape}, expected last dim {spec.layer_dims[0]}"
        )
    inputs, pre, post = [], [], []
    h = x
    for layer in params:
        inputs.append(h)
        z = h @ layer.weights.T + layer.bias
        h = activate(layer.activation, z)
        pre.append(z)
        post.append(h)
    return h, MlpCache(inputs, pre, post, tuple(id(p.weights) for p in params))


def mlp_backward(
    spec: MlpSpec, params: Sequence[DenseLayer], cache: MlpCache, grad_y
) -> Tuple[GradStore, np.ndarray]:
    """Exact gradients; parameter grads are summed over the batch dimension.

    Keys of the returned store are ``"{k}.weights"`` and ``"{k}.bias"``.
    """
    if cache.param_ids != tuple(id(p.weights) for p in params) or len(cache.pre) != len(params):
        raise CacheError("MLP cache was produced with different parameters")
    grad = np.asarray(grad_y, dtype=np.float64)
    if grad.shape != cache.post[-1].shape:
        raise CacheError(f"grad_y shape {grad.shape} != output shape {cache.post[-1].shape}")
    grads: GradStore = {}
    for k in range(len(params) - 1, -1, -1):
        layer = params[k]
        gz = activate_grad(layer.activation, cache.pre[k], cache.post[k], grad)
        x_in = cache.inputs[k]
        if gz.ndim == 1:
            grads[f"{k}.weights"] = np.outer(gz, x_in)
            grads[f"{k}.bias"] = gz.copy()
        else:
            grads[f"{k}.weights"] = gz.T @ x_in
            grads[f"{k}.bias"] = gz.sum(axis=0)
        grad = gz @ layer.weights
    return grads, grad


def named_parameters(layers: Sequence[DenseLayer], prefix: str = "") -> Dict[str, np.ndarray]:
    """Name -> array views of the layers' tensors (mutating them mutates the layers)."""
    out = {}
    for k, layer in enumerate(layers):
        out[f"{prefix}{k}.weights"] = layer.weights
        out[f"{prefix}{k}.bias"] = layer.bias
    return out


def finite_diff_grad(
    f: Callable[[Dict[str, np.ndarray]], float],
    params: Dict[str, np.ndarray],
    eps: float = 1e-6,
) -> GradStore:
    """Central-difference gradient of a scalar function of ``params``.

    ``params`` maps names to arrays that are perturbed *in place* (and
    restored), so ``f`` may close over the objects holding them. ``f`` is
    called with ``params`` as its only argument.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grads: GradStore = {}
    for name, arr in params.items():
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(params)
            flat[i] = orig - eps
            fm = f(params)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite evaluation while differencing {name}[{i}]")
            gflat[i] = (fp - fm) / (2.0 * eps)
        grads[name] = g
    return grads


def max_relative_error(a: GradStore, b: GradStore, floor: float = 1e-6) -> float:
    """Worst ``|a-b| / max(|a|, |b|, floor)`` over all entries of matching stores.

    The floor keeps entries whose true gradient is ~0 from being judged on
    finite-difference round-off alone.
    """
    if a.keys() != b.keys():
        raise KeyError(f"gradient stores differ: {sorted(a)} vs {sorted(b)}")
    worst = 0.0
    for k in a:
        if a[k].shape != b[k].shape:
            raise ValueError(f"{k}: shape {a[k].shape} vs {b[k].shape}")
        denom = np.maximum(np.maximum(np.abs(a[k]), np.abs(b[k])), floor)
        if a[k].size:
            worst = max(worst, float(np.max(np.abs(a[k] - b[k]) / denom)))
    return worst
