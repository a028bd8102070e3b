"""Parameters, small layers and the Adam optimizer on top of ``tensor``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .rng import RngStream
from .tensor import Tensor, ShapeError, backward, relu, silu


class ParameterSet:
    """Ordered named parameters plus their Adam state."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: t.shape for k, t in self._params.items()}

    def set_value(self, name: str, value: np.ndarray) -> None:
        t = self._params[name]
        value = np.asarray(value, dtype=self.dtype)
        if value.shape != t.shape:
            raise ShapeError(f"{name}: shape is fixed at {t.shape}, got {value.shape}")
        t.data = value.copy()

    def n_elements(self) -> int:
        return sum(t.size for t in self._params.values())

    def copy(self) -> "ParameterSet":
        out = ParameterSet(self.dtype)
        for k, t in self._params.items():
            out.add(k, t.data.copy())
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
        out.step = self.step
        return out


def forward_graph(params: ParameterSet, net: Callable, *inputs) -> Tensor:
    """Run ``net(params, *inputs)``; parameters are fresh leaves for this pass."""
    for t in params._params.values():
        t.grad = None
    return net(params, *inputs)


def gradients(params: ParameterSet, loss: Tensor) -> dict[str, np.ndarray]:
    """Backward pass from ``loss``; parameters the loss ignores get zeros."""
    named = backward(loss)
    return {k: named.get(k, np.zeros_like(t.data)) for k, t in params.items()}


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              clip_norm: float | None = None) -> ParameterSet:
    missing = [k for k in params if k not in grads]
    if missing:
        raise KeyError(f"no gradient for parameters {missing}")
    scale = 1.0
    if clip_norm is not None:
        total = np.sqrt(sum(float(np.sum(np.square(grads[k], dtype=np.float64))) for k in params))
        if total > clip_norm:
            scale = clip_norm / (total + 1e-12)
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads[k] * scale if scale != 1.0 else grads[k]
        params.m[k] = (beta1 * params.m[k] + (1 - beta1) * g).astype(params.dtype)
        params.v[k] = (beta2 * params.v[k] + (1 - beta2) * g * g).astype(params.dtype)
        update = lr * (params.m[k] / c1) / (np.sqrt(params.v[k] / c2) + eps)
        p.data = (p.data - update).astype(params.dtype)
    return params


def init_linear(params: ParameterSet, name: str, n_in: int, n_out: int, rng: RngStream) -> None:
    bound = 1.0 / np.sqrt(n_in)
    params.add(f"{name}.w", rng.uniform(-bound, bound, (n_in, n_out)))
    params.add(f"{name}.b", rng.uniform(-bound, bound, (n_out,)))


def linear(params: ParameterSet, name: str, x: Tensor) -> Tensor:
    w = params[f"{name}.w"]
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"{name}: expected input features {w.shape[0]}, got {x.shape[-1]} "
                         f"(input shape {x.shape})")
    return x @ w + params[f"{name}.b"]


ACTIVATIONS = {"relu": relu, "silu": silu}


@dataclass
class MLP:
    sizes: Sequence[int]
    activation: str = "relu"
    prefix: str = "mlp"

    def init(self, rng: RngStream, params: ParameterSet | None = None) -> ParameterSet:
        params = params if params is not None else ParameterSet()
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            init_linear(params, f"{self.prefix}.{i}", a, b, rng)
        return params

    def __call__(self, params: ParameterSet, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self.activation]
        n = len(self.sizes) - 1
        for i in range(n):
            x = linear(params, f"{self.prefix}.{i}", x)
            if i < n - 1:
                x = act(x)
        return x


@dataclass
class Normalizer:
    """Per-dimension affine map of data onto [-1, 1]."""

    low: np.ndarray
    high: np.ndarray
    eps: float = 1e-6
    _span: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.float64)
        self.high = np.asarray(self.high, dtype=np.float64)
        self._span = np.maximum(self.high - self.low, self.eps)

    @classmethod
    def fit(cls, x: np.ndarray) -> "Normalizer":
        x = np.asarray(x).reshape(-1, np.asarray(x).shape[-1])
        return cls(x.min(axis=0), x.max(axis=0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (2.0 * (x - self.low) / self._span - 1.0).astype(np.float32)

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return ((np.asarray(z, dtype=np.float64) + 1.0) * 0.5 * self._span + self.low).astype(np.float32)

    def to_meta(self) -> dict:
        return {"low": self.low.tolist(), "high": self.high.tolist()}

    @classmethod
    def from_meta(cls, meta: dict) -> "Normalizer":
        return cls(np.array(meta["low"]), np.array(meta["high"]))
