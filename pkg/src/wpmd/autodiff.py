"""Minimal reverse-mode autodiff over float64 numpy arrays.

Feature maps are laid out (H, W, C). Convolution weights are (k, k, C_in, C_out).
Only bias addition broadcasts (a 1-D tensor over the last axis).
"""
from __future__ import annotations

import math
import struct
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

LN_EPS = 1e-5


class ShapeError(ValueError):
    def __init__(self, op: str, a, b, detail: str = ""):
        msg = f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1 or self.data.ndim > 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        # iterative post-order DFS; graphs can be deep
        order, seen, stack = [], set(), [(self, False)]
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
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg

    __add__ = lambda self, other: add(self, other)
    __sub__ = lambda self, other: sub(self, other)
    __mul__ = lambda self, other: hadamard(self, other)
    __matmul__ = lambda self, other: matmul(self, other)
    __getitem__ = lambda self, idx: take(self, idx)


def _node(data, parents, backward, op) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, tuple(parents) if req else (), backward if req else None, op)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# elementwise ---------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1-D bias over the last axis of ``a``."""
    a, b = constant(a), constant(b)
    if a.shape == b.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        axes = tuple(range(a.data.ndim - 1))
        return _node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)), "add")
    raise ShapeError("add", a.shape, b.shape)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError("hadamard", a.shape, b.shape)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "hadamard")


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError("div", a.shape, b.shape)
    out = a.data / b.data
    return _node(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def shift(a: Tensor, c: float) -> Tensor:
    return _node(a.data + c, (a,), lambda g: (g,), "shift")


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data > lo) & (a.data < hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _node(a.data * pos, (a,), lambda g: (g * pos,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


# reductions and shape ------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    return _node(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _node(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n),), "mean")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.shape, (), "expects a matrix")
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def take(a: Tensor, idx) -> Tensor:
    """Basic (slice/integer) indexing."""
    out = a.data[idx]

    def back(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _node(out, (a,), back, "take")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [constant(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", tensors[0].shape, tensors[-1].shape) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


# linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _node(s, (a,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),), "softmax")


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis, then apply per-channel scale and shift."""
    c = x.shape[-1]
    if weight.shape != (c,) or bias.shape != (c,):
        raise ShapeError("layer_norm", x.shape, weight.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    xhat = (x.data - mu) * inv
    axes = tuple(range(x.data.ndim - 1))

    def back(g):
        dxhat = g * weight.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _node(xhat * weight.data + bias.data, (x, weight, bias), back, "layer_norm")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 'same' convolution (cross-correlation) with zero padding, odd kernels."""
    if x.data.ndim != 3 or weight.data.ndim != 4 or weight.shape[2] != x.shape[2] \
            or weight.shape[0] != weight.shape[1] or weight.shape[0] % 2 == 0:
        raise ShapeError("conv2d", x.shape, weight.shape)
    h, w, cin = x.shape
    k, cout = weight.shape[0], weight.shape[3]
    p = k // 2
    xp = np.pad(x.data, ((p, p), (p, p), (0, 0)))
    cols = sliding_window_view(xp, (k, k), axis=(0, 1)).reshape(h * w, cin * k * k)
    w2 = weight.data.transpose(2, 0, 1, 3).reshape(cin * k * k, cout)
    out = (cols @ w2).reshape(h, w, cout)

    def back(g):
        g2 = g.reshape(h * w, cout)
        gw = (cols.T @ g2).reshape(cin, k, k, cout).transpose(1, 2, 0, 3)
        gcols = (g2 @ w2.T).reshape(h, w, cin, k, k)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[i:i + h, j:j + w, :] += gcols[:, :, :, i, j]
        gx = gxp[p:p + h, p:p + w, :]
        return (gx, gw) if bias is None else (gx, gw, g2.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError("conv2d", weight.shape, bias.shape, "bias")
        out = out + bias.data
    return _node(out, parents, back, "conv2d")


def transposed_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-2 transposed convolution mapping (h, w, C_in) to (2h, 2w, C_out).

    Kernels are even-sized; the full output is cropped by ``(k - 2) / 2`` per side.
    """
    if x.data.ndim != 3 or weight.data.ndim != 4 or weight.shape[2] != x.shape[2] \
            or weight.shape[0] != weight.shape[1] or weight.shape[0] % 2 == 1:
        raise ShapeError("transposed_conv2d", x.shape, weight.shape)
    h, w, cin = x.shape
    k, cout = weight.shape[0], weight.shape[3]
    p = (k - 2) // 2
    x2 = x.data.reshape(h * w, cin)
    w2 = weight.data.transpose(2, 0, 1, 3).reshape(cin, k * k * cout)
    y = (x2 @ w2).reshape(h, w, k, k, cout)
    full = np.zeros((2 * h + 2 * p, 2 * w + 2 * p, cout))
    for a in range(k):
        for b in range(k):
            full[a:a + 2 * h:2, b:b + 2 * w:2] += y[:, :, a, b]
    out = full[p:p + 2 * h, p:p + 2 * w]

    def back(g):
        gfull = np.pad(g, ((p, p), (p, p), (0, 0)))
        gy = np.empty((h, w, k, k, cout))
        for a in range(k):
            for b in range(k):
                gy[:, :, a, b] = gfull[a:a + 2 * h:2, b:b + 2 * w:2]
        gy2 = gy.reshape(h * w, k * k * cout)
        gx = (gy2 @ w2.T).reshape(h, w, cin)
        gw = (x2.T @ gy2).reshape(cin, k, k, cout).transpose(1, 2, 0, 3)
        return (gx, gw) if bias is None else (gx, gw, g.sum(axis=(0, 1)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError("transposed_conv2d", weight.shape, bias.shape, "bias")
        out = out + bias.data
    return _node(out, parents, back, "transposed_conv2d")


PRIMITIVES = (
    "matmul", "conv2d", "transposed_conv2d", "add", "hadamard", "relu", "sigmoid",
    "softmax", "layer_norm", "mean", "reshape", "concat",
)


# parameters, gradient checking, snapshots ---------------------------------

def uniform_param(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5, indices=None,
                      order: int = 2) -> float:
    """Max relative error between backprop and central differences of ``f`` at ``x``.

    ``order=2`` is the three-point stencil; ``order=4`` the five-point one, whose
    O(eps^4) truncation allows a larger step and hence less roundoff on small entries.
    ``indices`` restricts the check to a subset of flat coordinates.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    x.requires_grad = True
    x.grad = None
    f(x).backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices

    def at(i, value):
        flat[i] = value
        return flat[i], float(f(x).data)

    worst = 0.0
    for i in idx:
        orig = flat[i]
        hi, fp = at(i, orig + eps)
        lo, fm = at(i, orig - eps)
        if order == 2:
            # divide by the step actually represented, not the nominal 2*eps
            num = (fp - fm) / (hi - lo)
        else:
            _, fpp = at(i, orig + 2 * eps)
            _, fmm = at(i, orig - 2 * eps)
            num = (8 * (fp - fm) - (fpp - fmm)) / (12 * eps)
        flat[i] = orig
        ana = analytic.reshape(-1)[i]
        err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        worst = max(worst, err)
    x.grad = None
    return worst


SNAPSHOT_MAGIC = b"WPMDPARM"
SNAPSHOT_VERSION = 1


def snapshot_bytes(params: dict) -> bytes:
    """Serialize named arrays: magic, version, count, then (name, rank, dims, <f8 data)."""
    parts = [SNAPSHOT_MAGIC, struct.pack("<II", SNAPSHOT_VERSION, len(params))]
    for name, value in params.items():
        arr = np.asarray(value.data if isinstance(value, Tensor) else value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def parse_snapshot(data: bytes) -> dict[str, np.ndarray]:
    if data[:8] != SNAPSHOT_MAGIC:
        raise ValueError("not a parameter snapshot (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    pos = 16
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", data, pos)
        pos += 8 * rank
        size = int(np.prod(dims, dtype=np.int64))
        if pos + 8 * size > len(data):
            raise ValueError(f"truncated snapshot while reading {name!r}")
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(tuple(dims)).astype(np.float64)
        pos += 8 * size
    return out


def save_snapshot(params: dict, path) -> None:
    with open(path, "wb") as fh:
        fh.write(snapshot_bytes(params))


def load_snapshot(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return parse_snapshot(fh.read())
