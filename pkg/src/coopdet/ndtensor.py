"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op takes and returns :class:`Tensor` objects and records a closure that
maps the output gradient back onto its inputs.  Calling :meth:`Tensor.backward`
on a scalar walks the recorded graph in reverse topological order.

Convolutions work on unbatched ``[C, H, W]`` maps, which is all the
detection pipeline needs.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor", "tensor", "zeros", "ones",
    "add", "sub", "mul", "div", "neg", "exp", "log", "sin", "cos", "abs_",
    "relu", "sigmoid", "log_sigmoid", "softmax", "log_softmax",
    "tsum", "tmean", "reshape", "transpose", "concat", "stack", "take",
    "smooth_l1", "square", "power",
    "conv2d", "conv_transpose2d", "dense", "mean_pool2d", "bilinear_sample",
    "Module", "AdamW", "clip_grad_norm", "save_checkpoint", "load_checkpoint",
]


class Tensor:
    """N-d array of float64 values with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __getitem__(self, idx): return take(self, idx)

    def sum(self, axis=None): return tsum(self, axis)
    def mean(self, axis=None): return tmean(self, axis)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad, name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    live = tuple(p for p in parents if p.requires_grad)
    out.requires_grad = bool(live)
    out._parents = tuple(parents) if live else ()
    out._backward = backward if live else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: ((a, _unbroadcast(g * b.data, a.shape)),
                            (b, _unbroadcast(g * a.data, b.shape))))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: ((a, _unbroadcast(g / b.data, a.shape)),
                            (b, _unbroadcast(-g * out / b.data, b.shape))))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: ((a, -g),))


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: ((a, 2.0 * a.data * g),))


def power(a, k: float) -> Tensor:
    a = _as_tensor(a)
    if k == 2:
        return square(a)
    return _make(a.data ** k, (a,), lambda g: ((a, g * k * a.data ** (k - 1)),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: ((a, g * out),))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: ((a, g / a.data),))


def sin(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: ((a, g * np.cos(a.data)),))


def cos(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: ((a, -g * np.sin(a.data)),))


def abs_(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: ((a, g * np.sign(a.data)),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    # np.maximum propagates NaN so corrupted inputs surface as a non-finite loss
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: ((a, g * pos),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = _sigmoid_np(a.data)
    return _make(out, (a,), lambda g: ((a, g * out * (1.0 - out)),))


def log_sigmoid(a) -> Tensor:
    """Numerically stable ``log(sigmoid(a))``."""
    a = _as_tensor(a)
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: ((a, g * (1.0 - _sigmoid_np(x))),))


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    axis = _check_axis(axis, a.ndim)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return ((a, out * (g - (g * out).sum(axis=axis, keepdims=True))),)

    return _make(out, (a,), back)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    axis = _check_axis(axis, a.ndim)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _make(out, (a,), lambda g: ((a, g - sm * g.sum(axis=axis, keepdims=True)),))


def smooth_l1(a, beta: float = 1.0) -> Tensor:
    """Elementwise Huber-style loss: 0.5 x²/beta inside |x|<beta, |x|-beta/2 outside."""
    a = _as_tensor(a)
    x = a.data
    inside = np.abs(x) < beta
    out = np.where(inside, 0.5 * x * x / beta, np.abs(x) - 0.5 * beta)
    return _make(out, (a,), lambda g: ((a, g * np.where(inside, x / beta, np.sign(x))),))


# reductions and shape ops -------------------------------------------------

def tsum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        gg = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(gg, a.shape).copy()),)

    return _make(np.asarray(out, dtype=np.float64), (a,), back)


def tmean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(a.shape)),))


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: ((a, g.transpose(inv)),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def back(g):
        return tuple(zip(parts, np.split(g, sizes, axis=axis)))

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, back)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]

    def back(g):
        return tuple((p, np.take(g, i, axis=axis)) for i, p in enumerate(parts))

    return _make(np.stack([p.data for p in parts], axis=axis), parts, back)


def take(a, idx) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate on the way back."""
    a = _as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return ((a, full),)

    return _make(np.asarray(a.data[idx], dtype=np.float64), (a,), back)


# convolution --------------------------------------------------------------

def _check_conv(x: np.ndarray, k: np.ndarray, stride: int, padding: int) -> None:
    if x.ndim != 3 or k.ndim != 4:
        raise ValueError(f"conv expects input [C,H,W] and kernel [O,I,k,k]; got {x.shape}, {k.shape}")
    if k.shape[1] != x.shape[0]:
        raise ValueError(
            f"kernel expects {k.shape[1]} input channels but input has {x.shape[0]}")
    if k.shape[2] != k.shape[3]:
        raise ValueError(f"square kernels only, got {k.shape[2]}x{k.shape[3]}")
    if stride < 1 or padding < 0:
        raise ValueError(f"stride must be >= 1 and padding >= 0, got {stride}, {padding}")


def _conv_out(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _conv_fwd(x: np.ndarray, k: np.ndarray, stride: int, padding: int) -> np.ndarray:
    kk = k.shape[2]
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
    win = sliding_window_view(xp, (kk, kk), axis=(1, 2))[:, ::stride, ::stride]
    c, ho, wo = win.shape[:3]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, -1)
    return (k.reshape(k.shape[0], -1) @ cols.T).reshape(k.shape[0], ho, wo)


def _conv_input_grad(g: np.ndarray, k: np.ndarray, stride: int, padding: int,
                     in_shape: tuple[int, int, int]) -> np.ndarray:
    """Adjoint of ``_conv_fwd`` with respect to its input."""
    c, h, w = in_shape
    kk = k.shape[2]
    ho, wo = g.shape[1:]
    hp, wp = h + 2 * padding, w + 2 * padding
    # [I, k, k, ho, wo]
    cols = np.tensordot(k, g, axes=([0], [0]))
    out = np.zeros((c, hp, wp))
    for i in range(kk):
        for j in range(kk):
            out[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, i, j]
    return out[:, padding:padding + h, padding:padding + w]


def _conv_kernel_grad(x: np.ndarray, g: np.ndarray, ksize: int, stride: int,
                      padding: int) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
    ho, wo = g.shape[1:]
    win = sliding_window_view(xp, (ksize, ksize), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    return np.tensordot(g, win, axes=([1, 2], [1, 2]))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlate ``x[C_in,H,W]`` with ``kernel[C_out,C_in,k,k]``."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    _check_conv(x.data, kernel.data, stride, padding)
    ks = kernel.shape[2]
    ho = _conv_out(x.shape[1], ks, stride, padding)
    wo = _conv_out(x.shape[2], ks, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"input {x.shape} too small for kernel {ks} / stride {stride}")
    out = _conv_fwd(x.data, kernel.data, stride, padding)
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def back(g):
        res = [(x, _conv_input_grad(g, kernel.data, stride, padding, x.shape) if x.requires_grad else None),
               (kernel, _conv_kernel_grad(x.data, g, ks, stride, padding) if kernel.requires_grad else None)]
        if bias is not None:
            res.append((bias, g.sum(axis=(1, 2))))
        return res

    return _make(out, parents, back)


def conv_transpose2d(y: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` for the same ``kernel[C_out,C_in,k,k]``.

    Maps ``y[C_out,h,w]`` to ``[C_in, (h-1)*stride - 2*padding + k + output_padding, ...]``.
    """
    y, kernel = _as_tensor(y), _as_tensor(kernel)
    if y.ndim != 3 or kernel.ndim != 4 or kernel.shape[0] != y.shape[0]:
        raise ValueError(
            f"transposed conv expects y[C_out,h,w] with kernel[C_out,C_in,k,k]; got {y.shape}, {kernel.shape}")
    if stride < 1 or padding < 0 or not 0 <= output_padding < max(stride, 1 + padding):
        raise ValueError(f"bad stride/padding/output_padding {stride}/{padding}/{output_padding}")
    ks = kernel.shape[2]
    h = (y.shape[1] - 1) * stride - 2 * padding + ks + output_padding
    w = (y.shape[2] - 1) * stride - 2 * padding + ks + output_padding
    if h < 1 or w < 1:
        raise ValueError(f"transposed conv output would be empty for input {y.shape}")
    in_shape = (kernel.shape[1], h, w)
    out = _conv_input_grad(y.data, kernel.data, stride, padding, in_shape)
    parents = (y, kernel) if bias is None else (y, kernel, bias)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def back(g):
        res = [(y, _conv_fwd(g, kernel.data, stride, padding)[:, :y.shape[1], :y.shape[2]]
                if y.requires_grad else None),
               (kernel, _conv_kernel_grad(g, y.data, ks, stride, padding) if kernel.requires_grad else None)]
        if bias is not None:
            res.append((bias, g.sum(axis=(1, 2))))
        return res

    return _make(out, parents, back)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``weight @ x + bias`` over the last axis of ``x``."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"dense: input width {x.shape[-1]} != weight fan-in {weight.shape[1]}")
    out = x.data @ weight.data.T
    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is not None:
        out = out + bias.data

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        res = [(x, g @ weight.data), (weight, g2.T @ x2)]
        if bias is not None:
            res.append((bias, g2.sum(axis=0)))
        return res

    return _make(out, parents, back)


def mean_pool2d(x: Tensor, k: int | None = None) -> Tensor:
    """Non-overlapping ``k x k`` mean pooling of ``[C,H,W]``; ``k=None`` pools globally to ``[C]``."""
    x = _as_tensor(x)
    c, h, w = x.shape
    if k is None:
        return tmean(x, axis=(1, 2))
    if h % k or w % k:
        raise ValueError(f"pool size {k} does not divide spatial extent {h}x{w}")
    return tmean(reshape(x, (c, h // k, k, w // k, k)), axis=(2, 4))


def bilinear_sample(x: Tensor, coords: Tensor) -> Tensor:
    """Sample ``x[C,H,W]`` at ``coords[N,2]`` given as (u, v) = (column, row).

    Points outside ``[0,W) x [0,H)`` read as zero, and so do interpolation
    corners that fall off the array.  Differentiable w.r.t. both arguments.
    """
    x, coords = _as_tensor(x), _as_tensor(coords)
    c, h, w = x.shape
    u = coords.data[:, 0]
    v = coords.data[:, 1]
    inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = u - u0
    fv = v - v0
    u0 = u0.astype(np.int64)
    v0 = v0.astype(np.int64)
    corners = []
    for du, dv, wt, dwu, dwv in (
            (0, 0, (1 - fu) * (1 - fv), -(1 - fv), -(1 - fu)),
            (1, 0, fu * (1 - fv), (1 - fv), -fu),
            (0, 1, (1 - fu) * fv, -fv, (1 - fu)),
            (1, 1, fu * fv, fv, fu)):
        uu = u0 + du
        vv = v0 + dv
        ok = inside & (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
        ui = np.where(ok, uu, 0)
        vi = np.where(ok, vv, 0)
        vals = np.where(ok, x.data[:, vi, ui], 0.0)
        corners.append((ok, ui, vi, wt, dwu, dwv, vals))
    out = sum(wt * vals for ok, ui, vi, wt, dwu, dwv, vals in corners)

    def back(g):
        gx = np.zeros_like(x.data) if x.requires_grad else None
        gc = np.zeros_like(coords.data) if coords.requires_grad else None
        for ok, ui, vi, wt, dwu, dwv, vals in corners:
            if gx is not None:
                np.add.at(gx, (slice(None), vi[ok], ui[ok]), (g * wt)[:, ok])
            if gc is not None:
                gv = (g * vals).sum(axis=0)
                gc[:, 0] += gv * dwu
                gc[:, 1] += gv * dwv
        return ((x, gx), (coords, gc))

    return _make(out, (x, coords), back)


# parameters ---------------------------------------------------------------

class Module:
    """Container that discovers parameter tensors held in attributes.

    Attributes that are trainable tensors, sub-modules, or lists of
    sub-modules are walked in definition order, giving stable dotted names.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            yield from _walk(val, f"{prefix}{key}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, p in own.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"checkpoint shape mismatch for {n}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


def _walk(val, name: str) -> Iterator[tuple[str, Tensor]]:
    if isinstance(val, Tensor):
        if val.requires_grad:
            yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(name + ".")
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            yield from _walk(item, f"{name}.{i}")


def init_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> Tensor:
    """Trainable tensor drawn from U(-s, s) with s = 1/sqrt(fan_in)."""
    s = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-s, s, size=tuple(shape)), requires_grad=True)


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            p.data *= 1.0 - self.lr * self.weight_decay
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad ** 2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``; returns the prior norm."""
    params = [p for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params))
    if norm > max_norm > 0:
        for p in params:
            p.grad *= max_norm / norm
    return norm


def save_checkpoint(module: Module, path: str | Path) -> None:
    """Write parameters as a JSON list of ``{"name", "shape", "values"}`` records."""
    records = [{"name": n, "shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
               for n, p in module.named_parameters()]
    Path(path).write_text(json.dumps(records))


def load_checkpoint(module: Module, path: str | Path) -> None:
    records = json.loads(Path(path).read_text())
    state = {r["name"]: np.asarray(r["values"], dtype=np.float64).reshape(r["shape"]) for r in records}
    module.load_state_dict(state)
