"""Dense float64 tensors with reverse-mode automatic differentiation.

Storage is a numpy array owned by the Tensor (row-major, copied on
construction, flagged read-only). Every differentiable op records its
inputs and a backward closure on a define-by-run tape; ``backward`` on a
scalar loss replays the tape in reverse topological order and accumulates
gradients into ``.grad`` of every reachable tensor that requires them.

Ops never mutate their inputs. Numerically sensitive ops (softmax,
layer norm) use the standard stable formulations.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op's contract."""


class ContractError(ValueError):
    """Raised when a call violates a documented precondition."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling tape recording (inference / sampling)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)  # copy: caller keeps their buffer
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @staticmethod
    def _wrap(arr: np.ndarray, requires_grad: bool, parents=(), backward=None) -> "Tensor":
        t = Tensor.__new__(Tensor)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        if arr.flags.writeable:
            arr.setflags(write=False)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._parents = parents
        t._backward = backward
        return t

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _record(out_data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result; only attaches tape state when grads are live."""
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if req:
        return Tensor._wrap(out_data, True, tuple(parents), backward_fn)
    return Tensor._wrap(out_data, False)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _record(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    return _record(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _record(out, (a, b), bw)


def square(a) -> Tensor:
    a = as_tensor(a)
    out = a.data * a.data

    def bw(g):
        return (2.0 * a.data * g if a.requires_grad else None,)

    return _record(out, (a,), bw)


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires tensors with at least 2 axes")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return (ga, gb)

    return _record(out, (a, b), bw)


# -- shape ops ----------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if shape.count(-1) > 1:
        raise ShapeError(f"reshape allows at most one -1, got {shape}")
    if -1 in shape:
        rest = int(np.prod([s for s in shape if s != -1], dtype=np.int64))
        if rest == 0 or a.size % rest:
            raise ShapeError(f"cannot reshape {a.shape} to {shape}")
        shape = tuple(a.size // rest if s == -1 else s for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    out = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.shape) if a.requires_grad else None,)

    return _record(out, (a,), bw)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for ndim {a.ndim}")
    out = a.data.transpose(axes)
    inv = np.argsort(axes)

    def bw(g):
        return (g.transpose(inv) if a.requires_grad else None,)

    return _record(out, (a,), bw)


def _parse_side(side: str) -> list[list[str]]:
    items: list[list[str]] = []
    i, n = 0, len(side)
    while i < n:
        c = side[i]
        if c.isspace():
            i += 1
        elif c == "(":
            j = side.index(")", i)
            names = side[i + 1 : j].split()
            if not names:
                raise ShapeError(f"empty group in rearrange pattern: {side!r}")
            items.append(names)
            i = j + 1
        else:
            j = i
            while j < n and not side[j].isspace() and side[j] not in "()":
                j += 1
            items.append([side[i:j]])
            i = j
    return items


def rearrange(t, pattern: str, **sizes) -> Tensor:
    """einops-style permute/merge/split, e.g. ``"v t h w c -> (v t) (h w) c"``.

    Every name must appear exactly once on each side. Splitting a merged
    input axis needs all but one member size passed as keywords.
    """
    t = as_tensor(t)
    if "->" not in pattern:
        raise ShapeError(f"rearrange pattern needs '->': {pattern!r}")
    left, right = pattern.split("->")
    in_items, out_items = _parse_side(left), _parse_side(right)
    flat_in = [n for g in in_items for n in g]
    flat_out = [n for g in out_items for n in g]
    if len(set(flat_in)) != len(flat_in) or len(set(flat_out)) != len(flat_out):
        raise ShapeError(f"duplicate axis name in pattern {pattern!r}")
    if set(flat_in) != set(flat_out):
        raise ShapeError(f"pattern sides use different names: {pattern!r}")
    if len(in_items) != t.ndim:
        raise ShapeError(
            f"pattern {pattern!r} describes {len(in_items)} axes, tensor has {t.ndim}"
        )

    dims = dict(sizes)
    for group, axis_len in zip(in_items, t.shape):
        unknown = [n for n in group if n not in dims]
        known = 1
        for n in group:
            if n in dims:
                known *= dims[n]
        if len(unknown) > 1:
            raise ShapeError(f"sizes needed for split group {group} in {pattern!r}")
        if unknown:
            if axis_len % known:
                raise ShapeError(
                    f"axis of length {axis_len} not divisible by {known} for group {group}"
                )
            dims[unknown[0]] = axis_len // known
        elif known != axis_len:
            raise ShapeError(
                f"group {group} sizes product {known} != axis length {axis_len}"
            )

    split_shape = [dims[n] for n in flat_in]
    perm = [flat_in.index(n) for n in flat_out]
    out_shape = [int(np.prod([dims[n] for n in g], dtype=np.int64)) for g in out_items]
    return reshape(transpose(reshape(t, split_shape), perm), out_shape)


def inverse_pattern(pattern: str) -> str:
    left, right = pattern.split("->")
    return f"{right.strip()} -> {left.strip()}"


# -- reductions ----------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not a.requires_grad:
            return (None,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _record(out, (a,), bw)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes], dtype=np.int64))
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not a.requires_grad:
            return (None,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return _record(out, (a,), bw)


# -- neural primitives ---------------------------------------------------------


def linear(x, w, b=None) -> Tensor:
    """y = x @ w (+ b) over the last axis; leading axes are batch.

    ``w`` has shape (in_features, out_features), ``b`` shape (out_features,).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight in-dim {w.shape[0]}")
    out = x.data @ w.data
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
        out = out + b.data

    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gx = gw = gb = None
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            gx = (g @ w.data.T).reshape(x.shape)
        if w.requires_grad:
            gw = x.data.reshape(-1, x.shape[-1]).T @ g2
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=0)
        return (gx, gw) if b is None else (gx, gw, gb)

    return _record(out, parents, bw)


def softmax_lastaxis(x) -> Tensor:
    """Stable softmax along the last axis (max-subtracted)."""
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise ShapeError("softmax needs last axis length >= 1")
    y = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)

    def bw(g):
        if not x.requires_grad:
            return (None,)
        gx = g * y
        dot = gx.sum(axis=-1, keepdims=True)
        gx -= dot * y
        return (gx,)

    return _record(y, (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({c},)")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = gg = gb = None
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=lead)
        if beta.requires_grad:
            gb = g.sum(axis=lead)
        if x.requires_grad:
            gh = g * gamma.data
            gx = (
                gh - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            ) * inv
        return (gx, gg, gb)

    return _record(out, (x, gamma, beta), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """tanh-approximated GELU."""
    x = as_tensor(x)
    d = x.data
    d2 = d * d
    inner = d * d2
    inner *= 0.044715
    inner += d
    inner *= _GELU_C
    th = np.tanh(inner)
    th += 1.0  # th now holds 1 + tanh(inner)
    out = 0.5 * d * th

    def bw(g):
        if not x.requires_grad:
            return (None,)
        sech2 = th * (2.0 - th)  # 1 - tanh^2 from the shifted value
        local = sech2 * (0.5 * _GELU_C) * d * (1.0 + 0.134145 * d2)
        local += 0.5 * th
        local *= g
        return (local,)

    return _record(out, (x,), bw)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation. x: (B,Cin,H,W); w: (Cout,Cin,kh,kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects x (B,C,H,W) and w (O,C,kh,kw)")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: x {x.shape} vs w {w.shape}")
    if stride < 1:
        raise ContractError("conv2d stride must be a positive int")
    if padding < 0:
        raise ContractError("conv2d padding must be >= 0")
    B, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ShapeError(f"kernel ({kh},{kw}) larger than padded input ({Hp},{Wp})")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # im2col: one BLAS gemm for the forward, column matrix reused by backward
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B * Ho * Wo, Cin * kh * kw)
    wf = w.data.reshape(Cout, Cin * kh * kw)
    out2 = col @ wf.T
    if b is not None:
        b = as_tensor(b)
        if b.shape != (Cout,):
            raise ShapeError(f"conv2d bias shape {b.shape} != ({Cout},)")
        out2 += b.data
    out = out2.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2)

    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gx = gw = gb = None
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * Ho * Wo, Cout)
        if w.requires_grad:
            gw = (g2.T @ col).reshape(Cout, Cin, kh, kw)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            gxp = np.zeros((B, Cin, Hp, Wp))
            gcol = (g2 @ wf).reshape(B, Ho, Wo, Cin, kh, kw)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += \
                        gcol[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        return (gx, gw) if b is None else (gx, gw, gb)

    return _record(out, parents, bw)


def _attention_core(qd: np.ndarray, kd: np.ndarray, vd: np.ndarray):
    d = qd.shape[-1]
    scale = 1.0 / math.sqrt(d)
    p = np.matmul(qd * scale, np.swapaxes(kd, -1, -2))
    p -= p.max(axis=-1, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=-1, keepdims=True)
    return np.matmul(p, vd), p, scale


def _attention_grads(g, p, scale, qd, kd, vd):
    gv = np.matmul(np.swapaxes(p, -1, -2), g)
    ds = np.matmul(g, np.swapaxes(vd, -1, -2))
    ds *= p
    ds -= p * ds.sum(axis=-1, keepdims=True)
    gq = np.matmul(ds, kd)
    gq *= scale
    gk= np.matmul(np.swapaxes(ds, -1, -2), qd)
    gk *= scale
    return gq, gk, gv


def scaled_attention(q, k, v) -> Tensor:
    """Fused softmax(q k^T / sqrt(d)) v over the last two axes.

    q, k, v: (..., N, d) with identical shapes. One op instead of five keeps
    the N x N probability matrix as the only large intermediate.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"attention expects matching shapes, got {q.shape}/{k.shape}/{v.shape}")
    out, p, scale = _attention_core(q.data, k.data, v.data)

    def bw(g):
        gq, gk, gv = _attention_grads(g, p, scale, q.data, k.data, v.data)
        return (gq if q.requires_grad else None,
                gk if k.requires_grad else None,
                gv if v.requires_grad else None)

    return _record(out, (q, k, v), bw)


def take_row(t, i: int) -> Tensor:
    """Select row i along the first axis (differentiable)."""
    t = as_tensor(t)
    if not 0 <= i < t.shape[0]:
        raise ShapeError(f"row {i} out of range for shape {t.shape}")
    out = t.data[i]

    def bw(g):
        if not t.requires_grad:
            return (None,)
        full = np.zeros(t.shape)
        full[i] = g
        return (full,)

    return _record(out, (t,), bw)


def packed_attention(qkv) -> Tensor:
    """scaled_attention on a packed (3, ..., N, d) tensor (q, k, v stacked)."""
    qkv = as_tensor(qkv)
    if qkv.shape[0] != 3:
        raise ShapeError(f"packed attention expects leading axis 3, got {qkv.shape}")
    qd, kd, vd = qkv.data[0], qkv.data[1], qkv.data[2]
    out, p, scale = _attention_core(qd, kd, vd)

    def bw(g):
        if not qkv.requires_grad:
            return (None,)
        gq, gk, gv = _attention_grads(g, p, scale, qd, kd, vd)
        return (np.stack([gq, gk, gv]),)

    return _record(out, (qkv,), bw)


# -- backward pass -------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` for every tensor the scalar ``loss`` depends on."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                # backward closures return fresh arrays or safe views; grads
                # are never mutated in place, so aliasing is harmless
                parent.grad = g if g.dtype == np.float64 else g.astype(np.float64)
            else:
                parent.grad = parent.grad + g
