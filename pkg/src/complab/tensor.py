"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op appends a node to a thread-local tape when at least
one input requires a gradient. ``backward`` replays the tape in reverse,
accumulates gradients into ``Tensor.grad`` and clears the tape, so one tape
corresponds to one training step.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, NumericError

_local = threading.local()


@dataclass
class Node:
    op: str
    inputs: tuple
    output: "Tensor"
    backward: Callable


@dataclass
class Graph:
    nodes: list = field(default_factory=list)
    enabled: bool = True

    def clear(self):
        self.nodes.clear()


def current_graph() -> Graph:
    g = getattr(_local, "graph", None)
    if g is None:
        g = _local.graph = Graph()
    return g


@contextmanager
def no_grad():
    g = current_graph()
    prev, g.enabled = g.enabled, False
    try:
        yield
    finally:
        g.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -other if not isinstance(other, Tensor) else neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {what}")


def record_op(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    g = current_graph()
    track = g.enabled and any(t.requires_grad for t in inputs)
    out.requires_grad = track
    if track:
        g.nodes.append(Node(op, tuple(inputs), out, backward))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor feeding ``loss`` that requires one."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor requiring grad")
    g = current_graph()
    loss.grad = np.ones_like(loss.data)
    try:
        for node in reversed(g.nodes):
            out = node.output
            if out.grad is None:
                continue
            grads = node.backward(out.grad)
            for t, gr in zip(node.inputs, grads):
                if gr is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.array(gr, dtype=np.float64)
                else:
                    t.grad = t.grad + gr
        for node in g.nodes:
            for t in node.inputs:
                if t.grad is not None:
                    _check_finite(t.grad, f"backward of {node.op}")
    finally:
        g.clear()


# --- elementwise -----------------------------------------------------------

def _as_const(x, shape):
    c = np.asarray(x, dtype=np.float64)
    if c.ndim and c.shape != shape:
        raise DimensionError(f"constant of shape {c.shape} does not match {shape}")
    return c


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise DimensionError(f"add: {a.shape} vs {b.shape}")
        return record_op("add", a.data + b.data, (a, b), lambda g: (g, g))
    c = _as_const(b, a.shape)
    return record_op("add", a.data + c, (a,), lambda g: (g,))


def neg(a: Tensor) -> Tensor:
    return record_op("neg", -a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise DimensionError(f"mul: {a.shape} vs {b.shape}")
        ad, bd = a.data, b.data
        return record_op("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))
    c = _as_const(b, a.shape)
    return record_op("mul", a.data * c, (a,), lambda g: (g * c,))


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return record_op("sum", np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return record_op("mean", np.array(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(str(e)) from None
    return record_op("reshape", data, (a,), lambda g: (g.reshape(old),))


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def pick(a: Tensor, index) -> Tensor:
    """``out[b] = a[b, index[b]]`` for a rank-2 input."""
    if a.data.ndim != 2:
        raise DimensionError("pick expects a rank-2 tensor")
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != (a.shape[0],):
        raise DimensionError(f"pick: need {a.shape[0]} indices, got {idx.shape}")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[rows, idx] = g
        return (out,)

    return record_op("pick", a.data[rows, idx], (a,), bw)


# --- layers ----------------------------------------------------------------

def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``out[b, o] = sum_i x[b, i] * weight[i, o] + bias[o]``."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError("dense expects input [batch, in], weight [in, out], bias [out]")
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise DimensionError(f"dense: {x.shape} @ {weight.shape} + {bias.shape}")
    xd, wd = x.data, weight.data

    def bw(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return record_op("dense", xd @ wd + bias.data, (x, weight, bias), bw)


def conv_output_extent(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if span < 0:
        raise DimensionError(f"kernel extent {k} exceeds padded input {size + 2 * pad}")
    if span % stride:
        raise DimensionError(
            f"non-integral output extent ({size}+2*{pad}-{k})/{stride}+1")
    return span // stride + 1


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation of ``x [B, Cin, H, W]`` with ``kernel [Cout, Cin, kh, kw]``."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError("conv2d expects rank-4 input and kernel")
    B, C, H, W = x.shape
    co, ci, kh, kw = kernel.shape
    if ci != C:
        raise DimensionError(f"conv2d: input has {C} channels, kernel expects {ci}")
    ho = conv_output_extent(H, kh, stride, pad)
    wo = conv_output_extent(W, kw, stride, pad)
    if bias is not None and bias.shape != (co,):
        raise DimensionError(f"conv2d: bias shape {bias.shape}, expected ({co},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # im2col rows ordered (b, i, j); columns (cin, kh, kw) to match the kernel layout
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * ho * wo, C * kh * kw)
    kmat = kernel.data.reshape(co, -1)
    out = (cols @ kmat.T).reshape(B, ho, wo, co)
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    hp, wp = xp.shape[2], xp.shape[3]

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, co)
        dk = (g2.T @ cols).reshape(kernel.shape)
        dcols = (g2 @ kmat).reshape(B, ho, wo, C, kh, kw)
        dxp = np.zeros((B, C, hp, wp))
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad:hp - pad, pad:wp - pad] if pad else dxp
        grads = [dx, dk]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record_op("conv2d", out, inputs, bw)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return record_op("relu", x.data * pos, (x,), lambda g: (g * pos,))


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""
    if x.data.ndim != 4:
        raise DimensionError("maxpool2x2 expects a rank-4 tensor")
    B, C, H, W = x.shape
    h2, w2 = H // 2, W // 2
    if h2 == 0 or w2 == 0:
        raise DimensionError(f"maxpool2x2 on spatial extent {H}x{W}")
    blocks = (x.data[:, :, :2 * h2, :2 * w2]
              .reshape(B, C, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h2, w2, 4))
    idx = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def bw(g):
        m = np.zeros((B, C, h2, w2, 4))
        np.put_along_axis(m, idx, g[..., None], axis=-1)
        m = m.reshape(B, C, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * h2, 2 * w2)
        dx = np.zeros((B, C, H, W))
        dx[:, :, :2 * h2, :2 * w2] = m
        return (dx,)

    return record_op("maxpool2x2", out, (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError("global_avg_pool expects a rank-4 tensor")
    B, C, H, W = x.shape
    n = H * W

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] / n, (B, C, H, W)),)

    return record_op("global_avg_pool", x.data.mean(axis=(2, 3)), (x,), bw)


def log_softmax_array(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"log_softmax expects [batch, classes], got {x.shape}")
    out = log_softmax_array(x.data)
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return record_op("log_softmax", out, (x,), bw)
