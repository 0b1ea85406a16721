"""Reverse-mode automatic differentiation over numpy arrays.

Operations append nodes to the active :class:`Tape` whenever one of their
inputs requires a gradient. Creation order is a topological order, so the
backward pass is a single reverse sweep over the tape.

Every primitive accepts plain ``ndarray`` inputs too. With no tape active (or
no input requiring a gradient) the primitive returns a bare ``ndarray`` and
records nothing, so model code written against these primitives doubles as a
fast inference path.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "TapeError",
    "backward",
    "value",
    "custom",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "sigmoid",
    "tanh",
    "exp",
    "square",
    "sqrt",
    "norm",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "getitem",
    "concat",
    "stack",
    "conv2d",
    "batch_norm",
    "conv_output_size",
]


class TapeError(RuntimeError):
    """Misuse of a tape, e.g. replaying it twice."""


class Tensor:
    """Array wrapper that takes part in gradient recording."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """Leaf tensor that accumulates gradients."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes are not supported.
    """

    _active: "Tape | None" = None

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise TapeError("a tape is already recording")
        Tape._active = self
        return self

    def __exit__(self, *exc) -> None:
        Tape._active = None

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor, params: Sequence[Tensor] | None = None) -> list[np.ndarray] | None:
        return backward(self, loss, params)


def value(x) -> np.ndarray:
    """Underlying array of a tensor or array-like."""
    return x.data if isinstance(x, Tensor) else x


def _tracked(*xs) -> bool:
    if Tape._active is None:
        return False
    for x in xs:
        if isinstance(x, Tensor) and x.requires_grad:
            return True
    return False


def custom(out: np.ndarray, parents: tuple, backward_fn: Callable) -> Tensor | np.ndarray:
    """Record a primitive with output ``out``.

    ``backward_fn(grad_out)`` must return one gradient (or None) per parent.
    Returns ``out`` unchanged when nothing upstream needs a gradient.
    """
    if not _tracked(*parents):
        return out
    node = Tensor(out, requires_grad=True)
    node._parents = parents
    node._backward = backward_fn
    Tape._active.nodes.append(node)
    return node


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None):
    """Reverse sweep from ``loss`` (a scalar node on ``tape``).

    Leaves accumulate into ``.grad``. If ``params`` is given, returns their
    gradients in order (zeros where the loss does not reach) and resets the
    ``.grad`` of every leaf the sweep touched, ready for the next tape.
    """
    if tape.consumed:
        raise TapeError("tape has already been replayed")
    if Tape._active is tape:
        raise TapeError("close the tape before replaying it")
    tape.consumed = True
    if not isinstance(loss, Tensor) or not loss.requires_grad:
        nodes = []
    else:
        if loss.data.size != 1:
            raise ValueError("backward expects a scalar loss")
        loss.grad = np.ones_like(loss.data)
        nodes = tape.nodes
    leaves = {}
    for node in reversed(nodes):
        g = node.grad
        if g is None:
            continue
        grads = node._backward(g)
        for parent, pg in zip(node._parents, grads):
            if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                continue
            if parent._backward is None and not parent._parents:
                leaves[id(parent)] = parent
            if parent.grad is None:
                parent.grad = pg
            else:
                parent.grad = parent.grad + pg
        # free intermediate storage as we go
        node.grad = None
        node._backward = None
        node._parents = ()
    tape.nodes = []
    if params is None:
        return None
    out = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    for leaf in leaves.values():
        leaf.grad = None
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


# -- elementwise ---------------------------------------------------------------


def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    if not _tracked(a, b):
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return custom(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv
    if not _tracked(a, b):
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return custom(out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    if not _tracked(a, b):
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return custom(out, (a, b), lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))


def neg(a):
    out = -value(a)
    return custom(out, (a,), lambda g: (-g,))


def exp(a):
    out = np.exp(value(a))
    return custom(out, (a,), lambda g: (g * out,))


def sigmoid(a):
    av = value(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * av))
    return custom(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(value(a))
    return custom(out, (a,), lambda g: (g * (1.0 - out * out),))


def square(a):
    av = value(a)
    return custom(av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a):
    out = np.sqrt(value(a))

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(out > 0, g / (2.0 * np.where(out > 0, out, 1.0)), 0.0),)

    return custom(out, (a,), bw)


def norm(a, axis=-1):
    """Euclidean norm along ``axis``; the subgradient at zero is taken as 0."""
    av = value(a)
    out = np.sqrt(np.sum(av * av, axis=axis))

    def bw(g):
        n = np.expand_dims(out, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, av / safe, 0.0) * np.expand_dims(g, axis),)

    return custom(out, (a,), bw)


# -- linear algebra and reductions ---------------------------------------------


def matmul(a, b):
    av, bv = value(a), value(b)
    out = av @ bv
    if not _tracked(a, b):
        return out

    def bw(g):
        ga = gb = None
        if isinstance(a, Tensor) and a.requires_grad:
            ga = g @ bv.T if bv.ndim == 2 else np.multiply.outer(g, bv)
        if isinstance(b, Tensor) and b.requires_grad:
            a2 = av.reshape(-1, av.shape[-1])
            g2 = g.reshape(a2.shape[0], -1) if bv.ndim == 2 else g.reshape(-1)
            gb = a2.T @ g2
        return ga, gb

    return custom(out, (a, b), bw)


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy
    av = value(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    shape = av.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return custom(out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False):
    av = value(a)
    out = np.mean(av, axis=axis, keepdims=keepdims)
    shape = av.shape
    count = av.size // max(np.size(out), 1)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return custom(out, (a,), bw)


def reshape(a, shape):
    av = value(a)
    out = av.reshape(shape)
    return custom(out, (a,), lambda g: (g.reshape(av.shape),))


def transpose(a, axes=None):
    av = value(a)
    out = np.transpose(av, axes)
    inv = None if axes is None else np.argsort(axes)
    return custom(out, (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx):
    av = value(a)
    out = av[idx]

    def bw(g):
        full = np.zeros_like(av)
        if _fancy(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return custom(out, (a,), bw)


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(xs: Sequence, axis: int = -1):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if not _tracked(*xs):
        return out
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return custom(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(xs: Sequence, axis: int = 0):
    vals = [value(x) for x in xs]
    out = np.stack(vals, axis=axis)
    if not _tracked(*xs):
        return out
    n = len(vals)
    return custom(out, tuple(xs), lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# -- convolution and normalisation ---------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # N, C, Ho, Wo, kh, kw
    n, c, ho, wo = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0):
    """2-D cross-correlation, NCHW input, weight (C_out, C_in, kh, kw)."""
    xv, wv = value(x), value(weight)
    n, c, h, w = xv.shape
    co, ci, kh, kw = wv.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {ci}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError("conv2d: kernel larger than padded input")
    cols = _im2col(xv, kh, kw, stride, padding)
    wmat = wv.reshape(co, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + value(bias)
    out = out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    if not _tracked(x, weight, bias):
        return out

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gw = (g2.T @ cols).reshape(wv.shape) if isinstance(weight, Tensor) and weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None else None
        gx = None
        if isinstance(x, Tensor) and x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            hp, wp = h + 2 * padding, w + 2 * padding
            gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gw, gb

    return custom(out, (x, weight, bias), bw)


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
):
    """Per-channel normalisation of an (N, C, ...) input.

    In training mode the batch statistics are used and the running buffers
    are updated in place; otherwise the running buffers are used.
    """
    xv = value(x)
    axes = (0,) + tuple(range(2, xv.ndim))
    bshape = (1, -1) + (1,) * (xv.ndim - 2)
    if training:
        mu = xv.mean(axis=axes)
        var = xv.var(axis=axes)
        m = xv.size // xv.shape[1]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / max(m - 1, 1)
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu.reshape(bshape)) * inv.reshape(bshape)
    gv, bv = value(gamma), value(beta)
    out = xhat * gv.reshape(bshape) + bv.reshape(bshape)
    if not _tracked(x, gamma, beta):
        return out

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gv.reshape(bshape)
        if training:
            m = xv.size // xv.shape[1]
            gx = (
                inv.reshape(bshape)
                / m
                * (
                    m * gxhat
                    - gxhat.sum(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
                )
            )
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta

    return custom(out, (x, gamma, beta), bw)
