"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape-free autograd engine: every differentiable operation returns a
new :class:`Tensor` holding references to its inputs and a closure that
propagates the output gradient back to them.  ``backward`` topologically
sorts the recorded graph and runs the closures once each, in reverse order.

Only the operations needed by the encoder, the contrastive/reconstruction
losses and the decoder are implemented.  Everything is float64 and CPU-only;
determinism is guaranteed by fixed reduction orders.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "no_grad",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "narrow",
    "concat",
    "tsum",
    "tmean",
    "exp",
    "log",
    "gelu",
    "logsumexp",
    "gather_time",
    "gather_batch",
    "dilated_causal_conv1d",
    "maxpool1d_time",
    "backward",
]

_grad_enabled = True

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    ``grad`` has the same shape as ``data`` once ``backward`` has run over a
    graph that this tensor participates in with ``requires_grad=True``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._backward_ran = False

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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # operator sugar; scalars are folded in without creating constant nodes
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float, np.integer, np.floating)):
        out = _node(a.data + float(b), (a,), None)
        if out.requires_grad:
            def bwd(g, a=a):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g, a.shape))
            out._backward = bwd
        return out
    b = _as_tensor(b)
    out = _node(a.data + b.data, (a, b), None)
    if out.requires_grad:
        def bwd(g, a=a, b=b):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))
        out._backward = bwd
    return out


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float, np.integer, np.floating)):
        return add(a, -float(b))
    return add(a, neg(_as_tensor(b)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = _node(-a.data, (a,), None)
    if out.requires_grad:
        def bwd(g, a=a):
            a._accumulate(-g)
        out._backward = bwd
    return out


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float, np.integer, np.floating)):
        out = _node(a.data * float(b), (a,), None)
        if out.requires_grad:
            def bwd(g, a=a, s=float(b)):
                a._accumulate(_unbroadcast(g * s, a.shape))
            out._backward = bwd
        return out
    b = _as_tensor(b)
    out = _node(a.data * b.data, (a, b), None)
    if out.requires_grad:
        def bwd(g, a=a, b=b):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))
        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports 2-D and batched 3-D operands (equal batch dims)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul requires ndim >= 2, got {a.ndim} and {b.ndim}")
    out = _node(np.matmul(a.data, b.data), (a, b), None)
    if out.requires_grad:
        def bwd(g, a=a, b=b):
            if a.requires_grad:
                a._accumulate(np.matmul(g, b.data.swapaxes(-1, -2)))
            if b.requires_grad:
                b._accumulate(np.matmul(a.data.swapaxes(-1, -2), g))
        out._backward = bwd
    return out


def transpose(a: Tensor, axes: tuple) -> Tensor:
    a = _as_tensor(a)
    inv = tuple(np.argsort(axes))
    out = _node(np.transpose(a.data, axes), (a,), None)
    if out.requires_grad:
        def bwd(g, a=a, inv=inv):
            a._accumulate(np.transpose(g, inv))
        out._backward = bwd
    return out


def reshape(a: Tensor, shape: tuple) -> Tensor:
    a = _as_tensor(a)
    out = _node(a.data.reshape(shape), (a,), None)
    if out.requires_grad:
        def bwd(g, a=a):
            a._accumulate(g.reshape(a.shape))
        out._backward = bwd
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    a = _as_tensor(a)
    if not (0 <= start and start + length <= a.shape[axis]):
        raise ValueError(
            f"narrow out of range: axis {axis} has size {a.shape[axis]}, "
            f"requested [{start}, {start + length})"
        )
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = _node(a.data[index].copy(), (a,), None)
    if out.requires_grad:
        def bwd(g, a=a, index=index):
            full = np.zeros_like(a.data)
            full[index] = g
            a._accumulate(full)
        out._backward = bwd
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), None)
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def bwd(g, tensors=tensors, offsets=offsets, axis=axis):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    t._accumulate(g[tuple(idx)])
        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# reductions and nonlinearities


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), None)
    if out.requires_grad:
        def bwd(g, a=a, axis=axis, keepdims=keepdims):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        out._backward = bwd
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        n = a.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        n = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)
    out = _node(out_data, (a,), None)
    if out.requires_grad:
        def bwd(g, a=a, y=out_data):
            a._accumulate(g * y)
        out._backward = bwd
    return out


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = _node(np.log(a.data), (a,), None)
    if out.requires_grad:
        def bwd(g, a=a):
            a._accumulate(g / a.data)
        out._backward = bwd
    return out


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU; smooth, so finite-difference checks are clean."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = _node(x * cdf, (a,), None)
    if out.requires_grad:
        def bwd(g, a=a, x=x, cdf=cdf):
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
            a._accumulate(g * (cdf + x * pdf))
        out._backward = bwd
    return out


def logsumexp(a: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Numerically stable log-sum-exp over the last axis.

    ``mask`` (boolean, broadcastable to ``a.shape``) selects which entries
    participate; every row must keep at least one entry.  The gradient is the
    masked softmax.
    """
    a = _as_tensor(a)
    x = a.data
    if mask is None:
        m = x.max(axis=-1, keepdims=True)
        e = np.exp(x - m)
    else:
        mask = np.broadcast_to(mask, x.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("logsumexp: some rows have no unmasked entries")
        xm = np.where(mask, x, -np.inf)
        m = xm.max(axis=-1, keepdims=True)
        e = np.exp(xm - m)  # masked entries: exp(-inf) == 0, no overflow
    s = e.sum(axis=-1, keepdims=True)
    out_data = (np.log(s) + m)[..., 0]
    out = _node(out_data, (a,), None)
    if out.requires_grad:
        softmax = e / s

        def bwd(g, a=a, softmax=softmax):
            a._accumulate(g[..., None] * softmax)
        out._backward = bwd
    return out


def gather_time(a: Tensor, idx: np.ndarray) -> Tensor:
    """``out[b, t] = a[b, idx[b, t]]`` for ``a`` of shape (B, T, K), idx (B, T')."""
    a = _as_tensor(a)
    B = a.shape[0]
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(B)[:, None]
    out = _node(a.data[rows, idx], (a,), None)
    if out.requires_grad:
        def bwd(g, a=a, rows=rows, idx=idx):
            full = np.zeros_like(a.data)
            np.add.at(full, (rows, idx), g)
            a._accumulate(full)
        out._backward = bwd
    return out


def gather_batch(a: Tensor, idx: np.ndarray) -> Tensor:
    """``out[b, t] = a[idx[b, t], t]`` for ``a`` of shape (B, T, K), idx (B, T)."""
    a = _as_tensor(a)
    T = a.shape[1]
    idx = np.asarray(idx, dtype=np.intp)
    cols = np.arange(T)[None, :]
    out = _node(a.data[idx, cols], (a,), None)
    if out.requires_grad:
        def bwd(g, a=a, cols=cols, idx=idx):
            full = np.zeros_like(a.data)
            np.add.at(full, (idx, cols), g)
            a._accumulate(full)
        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# sequence ops


def dilated_causal_conv1d(x: Tensor, w: Tensor, dilation: int = 1) -> Tensor:
    """Causal 1-D convolution along time.

    ``x`` is (B, T, Cin), ``w`` is (Cout, Cin, k); the input is left-padded by
    ``(k-1)*dilation`` zeros internally, so ``out[b, t]`` depends only on
    ``x[b, :t+1]``.  Tap ``k-1`` of the kernel multiplies the current step.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3:
        raise ValueError(f"conv input must be (B, T, Cin), got shape {x.shape}")
    if w.ndim != 3:
        raise ValueError(f"conv weights must be (Cout, Cin, k), got shape {w.shape}")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    B, T, Cin = x.shape
    Cout, Cin_w, k = w.shape
    if k < 1:
        raise ValueError(f"kernel size must be >= 1, got {k}")
    if Cin_w != Cin:
        raise ValueError(
            f"channel mismatch: input has Cin={Cin} but weights expect Cin={Cin_w}"
        )
    pad = (k - 1) * dilation
    xp = np.zeros((B, T + pad, Cin))
    xp[:, pad:, :] = x.data
    # one GEMM over all taps: cols[b,t,(ci,j)] = xp[b, t + j*dilation, ci]
    cols = np.stack([xp[:, j * dilation: j * dilation + T, :] for j in range(k)], axis=3)
    cols2 = cols.reshape(B * T, Cin * k)
    wm = w.data.transpose(1, 2, 0).reshape(Cin * k, Cout)
    out = _node((cols2 @ wm).reshape(B, T, Cout), (x, w), None)
    if out.requires_grad:
        def bwd(g, x=x, w=w, cols2=cols2, wm=wm, B=B, T=T, Cin=Cin, Cout=Cout, k=k,
                pad=pad, dilation=dilation):
            g2 = g.reshape(B * T, Cout)
            if w.requires_grad:
                dwm = cols2.T @ g2
                w._accumulate(dwm.reshape(Cin, k, Cout).transpose(2, 0, 1))
            if x.requires_grad:
                dcols = (g2 @ wm.T).reshape(B, T, Cin, k)
                dxp = np.zeros((B, T + pad, Cin))
                for j in range(k):
                    dxp[:, j * dilation: j * dilation + T, :] += dcols[:, :, :, j]
                x._accumulate(dxp[:, pad:, :])
        out._backward = bwd
    return out


def maxpool1d_time(x: Tensor, kernel: int) -> Tensor:
    """Max-pool along the time axis of (B, T, K) with ceil semantics.

    The last window may be shorter than ``kernel``; the gradient routes to the
    first maximal position in each window.
    """
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ValueError(f"maxpool input must be (B, T, K), got shape {x.shape}")
    if kernel < 1:
        raise ValueError(f"pool kernel must be >= 1, got {kernel}")
    B, T, K = x.shape
    To = -(-T // kernel)  # ceil
    Tp = To * kernel
    xp = np.full((B, Tp, K), -np.inf)
    xp[:, :T, :] = x.data
    xr = xp.reshape(B, To, kernel, K)
    arg = xr.argmax(axis=2)  # first maximal index on ties
    out = _node(np.take_along_axis(xr, arg[:, :, None, :], axis=2)[:, :, 0, :], (x,), None)
    if out.requires_grad:
        def bwd(g, x=x, arg=arg, B=B, T=T, K=K, To=To, kernel=kernel):
            full = np.zeros((B, To * kernel, K))
            t_src = np.arange(To)[None, :, None] * kernel + arg
            b_idx = np.arange(B)[:, None, None]
            k_idx = np.arange(K)[None, None, :]
            np.add.at(full, (b_idx, t_src, k_idx), g)
            x._accumulate(full[:, :T, :])
        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` tensor reachable from ``loss``.

    ``loss`` must be a scalar.  Running backward twice over the same graph is
    an error; build a fresh graph instead.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._backward_ran:
        raise RuntimeError("backward already ran on this graph; rebuild it before calling again")
    if not loss.requires_grad:
        loss._backward_ran = True
        return

    # iterative post-order DFS so deep graphs cannot hit the recursion limit
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    loss._backward_ran = True
