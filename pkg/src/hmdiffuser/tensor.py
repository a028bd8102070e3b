"""Dense tensors with reverse-mode automatic differentiation.

Every op builds a node holding its parents and a closure that maps the
upstream gradient to parent gradients. ``backward`` walks the graph in
reverse topological order and releases it afterwards.

Forward values keep the dtype of their inputs (float32 for model
parameters, float64 for gradient checks); reductions accumulate in float64.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand dimensions do not conform."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=self.dtype))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self) -> dict[str, np.ndarray]:
        return backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


_GRAD = {"enabled": True}


class no_grad:
    """Context manager that stops graph recording (inference passes)."""

    def __enter__(self):
        self._prev = _GRAD["enabled"]
        _GRAD["enabled"] = False
        return self

    def __exit__(self, *exc):
        _GRAD["enabled"] = self._prev
        return False


def _node(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    needs = _GRAD["enabled"] and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=fn)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.shape} @ {b.shape} "
            f"({a.shape[-1]} != {b.shape[-2]})")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), bw)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, dtype=np.float64, keepdims=keepdims).astype(x.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _node(np.asarray(out), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    out = (np.sum(x.data, axis=axis, dtype=np.float64, keepdims=keepdims) / count).astype(x.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return _node(np.asarray(out), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None

    def bw(g):
        return (g.reshape(x.shape),)

    return _node(out, (x,), bw)


def transpose(x: Tensor, axes=None) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return _node(out, (x,), bw)


def _is_fancy(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def getitem(x: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        index = index.data
    out = x.data[index]

    fancy = _is_fancy(index)

    def bw(g):
        full = np.zeros_like(x.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return _node(np.array(out, copy=True), (x,), bw)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ref = xs[0].shape
    ax = axis % len(ref)
    for x in xs[1:]:
        if len(x.shape) != len(ref) or any(
                x.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat along axis {axis}: incompatible shapes "
                             f"{[t.shape for t in xs]}")
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node(out, xs, bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)

    def bw(g):
        return (g * mask,)

    return _node(out, (x,), bw)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s

    def bw(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return _node(out, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), bw)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 convolution over the last axis with symmetric zero padding.

    ``x`` is (batch, in_channels, length), ``w`` is (out_channels,
    in_channels, kernel) with an odd kernel so the length is preserved.
    """
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x (B, C, W) and w (O, C, K), got {x.shape}, {w.shape}")
    bsz, cin, width = x.shape
    cout, wcin, k = w.shape
    if wcin != cin:
        raise ShapeError(f"conv1d: input has {cin} channels but kernel expects {wcin}")
    if k % 2 != 1:
        raise ShapeError(f"conv1d: kernel size must be odd for symmetric padding, got {k}")
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    cols = np.stack([xp[:, :, i:i + width] for i in range(k)], axis=2).reshape(bsz, cin * k, width)
    w2 = w.data.reshape(cout, cin * k)
    out = np.matmul(w2, cols)
    if b is not None:
        out = out + b.data[:, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        gcols = np.matmul(w2.T, g).reshape(bsz, cin, k, width)
        gxp = np.zeros_like(xp)
        for i in range(k):
            gxp[:, :, i:i + width] += gcols[:, :, i]
        gx = gxp[:, :, pad:pad + width]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _node(out, parents, bw)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalization of (batch, channels, length) with per-channel affine."""
    bsz, ch, width = x.shape
    if ch % groups:
        raise ShapeError(f"group_norm: {ch} channels not divisible into {groups} groups")
    xg = x.data.reshape(bsz, groups, -1)
    mu = xg.mean(axis=-1, dtype=np.float64, keepdims=True)
    var = ((xg - mu) ** 2).mean(axis=-1, dtype=np.float64, keepdims=True)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = ((xg - mu.astype(x.dtype)) * inv).reshape(bsz, ch, width)
    out = xhat * gamma.data[:, None] + beta.data[:, None]

    def bw(g):
        ggamma = (g * xhat).sum(axis=(0, 2))
        gbeta = g.sum(axis=(0, 2))
        gh = (g * gamma.data[:, None]).reshape(bsz, groups, -1)
        xh = xhat.reshape(bsz, groups, -1)
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xh * (gh * xh).mean(axis=-1, keepdims=True))
        return gx.reshape(x.shape), ggamma, gbeta

    return _node(out, (x, gamma, beta), bw)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor) -> dict[str, np.ndarray]:
    """Populate ``.grad`` on every leaf reachable from a scalar ``output``.

    Returns the gradients of named leaves. The graph is released afterwards,
    so a second call on the same output raises.
    """
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}; "
                         "reduce it first (sum or mean)")
    if not output.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    named: dict[str, np.ndarray] = {}
    for node in reversed(_toposort(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            if node.name is not None:
                named[node.name] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
        node._parents = ()
        node._backward = None
    return named


def zeros_like_grads(leaves: Iterable[Tensor]) -> None:
    for leaf in leaves:
        leaf.grad = None
