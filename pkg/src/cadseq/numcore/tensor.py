"""Dense-array reverse-mode autodiff on numpy.

A Tensor wraps an ndarray plus the recording needed for backpropagation:
parent tensors and a closure computing local gradients. Calling
``backward()`` on a scalar walks the recorded graph once in reverse
topological order. The primitive set is intentionally small: matmul,
elementwise arithmetic, causal depthwise conv, SiLU/sigmoid/softplus/exp,
layer norm, softmax, embedding gather, cross-entropy, MSE, reductions and
shape ops, plus the selective-scan recurrence (dispatched to the compiled
kernel when present).

Tensors are immutable values once created; a graph is single-writer and
confined to one training step.
"""

from __future__ import annotations

import numpy as np

from .. import kernels


class NonFiniteError(FloatingPointError):
    """A primitive produced a NaN or infinity where none is allowed."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _sum_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of its source operand."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """An ndarray with optional gradient recording."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):  # numpy scalar: keep its dtype
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = (requires_grad or any(p.requires_grad for p in parents)) \
            and _grad_enabled
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g: np.ndarray) -> None:
        # .grad is treated as read-only everywhere (clip/optimizers replace,
        # never mutate), so storing a shared array here is safe.
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


# -- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = Tensor(a.data + b.data, parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a._accum(_sum_to(g, a.data.shape))
        if b.requires_grad:
            b._accum(_sum_to(g, b.data.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = Tensor(a.data * b.data, parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a._accum(_sum_to(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_sum_to(g * a.data, b.data.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def texp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y, parents=(a,))

    def bwd(g):
        a._accum(g * y)

    out._backward = bwd if out.requires_grad else None
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Large negative inputs overflow exp to +inf, which still divides to
    # exactly 0, so a single-pass formula is safe with the warning off.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = Tensor(s, parents=(a,))

    def bwd(g):
        a._accum(g * (s * (1.0 - s)))

    out._backward = bwd if out.requires_grad else None
    return out


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = Tensor(a.data * s, parents=(a,))

    def bwd(g):
        a._accum(g * (s * (1.0 + a.data * (1.0 - s))))

    out._backward = bwd if out.requires_grad else None
    return out


def softplus(a: Tensor) -> Tensor:
    y = np.logaddexp(np.zeros((), dtype=a.data.dtype), a.data)
    out = Tensor(y, parents=(a,))

    def bwd(g):
        a._accum(g * _sigmoid(a.data))

    out._backward = bwd if out.requires_grad else None
    return out


# -- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(np.matmul(a.data, b.data), parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accum(_sum_to(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accum(_sum_to(gb, b.data.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def conv1d_causal(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Depthwise causal 1-D convolution.

    x: (B,T,C), w: (K,C), bias: (C). Output t depends on inputs t-K+1..t
    (zero padded on the left), so the op is causal by construction.
    """
    B, T, C = x.data.shape
    K = w.data.shape[0]
    xp = np.concatenate([np.zeros((B, K - 1, C), dtype=x.data.dtype), x.data], axis=1)
    y = np.zeros((B, T, C), dtype=x.data.dtype)
    for k in range(K):
        y += w.data[k] * xp[:, k:k + T, :]
    y += bias.data
    out = Tensor(y, parents=(x, w, bias))

    def bwd(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, k:k + T, :] += w.data[k] * g
            x._accum(gxp[:, K - 1:, :])
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for k in range(K):
                gw[k] = (g * xp[:, k:k + T, :]).sum(axis=(0, 1))
            w._accum(gw)
        if bias.requires_grad:
            bias._accum(g.sum(axis=(0, 1)))

    out._backward = bwd if out.requires_grad else None
    return out


def fused_ssm_scan(x: Tensor, dt: Tensor, a: Tensor, bsel: Tensor, c: Tensor) -> Tensor:
    """Selective scan with the first-order-hold discretization fused in.

    Equivalent to ssm_scan(x, exp(dt*a), dt*bsel, c) but never
    materializes the (B,T,E,N) discretized tensors on the tape.
    """
    y, h = kernels.sel_scan_fwd(x.data, dt.data, a.data, bsel.data, c.data)
    out = Tensor(y, parents=(x, dt, a, bsel, c))

    def bwd(g):
        dx, ddt, da, dbsel, dc = kernels.sel_scan_bwd(
            np.ascontiguousarray(g), h, x.data, dt.data, a.data, bsel.data, c.data)
        if x.requires_grad:
            x._accum(dx)
        if dt.requires_grad:
            dt._accum(ddt)
        if a.requires_grad:
            a._accum(da)
        if bsel.requires_grad:
            bsel._accum(dbsel)
        if c.requires_grad:
            c._accum(dc)

    out._backward = bwd if out.requires_grad else None
    return out


def ssm_scan(x: Tensor, abar: Tensor, bbar: Tensor, c: Tensor) -> Tensor:
    """Selective state recurrence h_t = abar_t*h_{t-1} + bbar_t*x_t, y_t = h_t . c_t.

    Shapes: x (B,T,E), abar/bbar (B,T,E,N), c (B,T,N) -> y (B,T,E).
    Causal: y_t never depends on inputs after t.
    """
    y, h = kernels.scan_fwd(x.data, abar.data, bbar.data, c.data)
    out = Tensor(y, parents=(x, abar, bbar, c))

    def bwd(g):
        dx, da, db, dc = kernels.scan_bwd(
            np.ascontiguousarray(g), h, x.data, abar.data, bbar.data, c.data)
        if x.requires_grad:
            x._accum(dx)
        if abar.requires_grad:
            abar._accum(da)
        if bbar.requires_grad:
            bbar._accum(db)
        if c.requires_grad:
            c._accum(dc)

    out._backward = bwd if out.requires_grad else None
    return out


# -- normalization and attention building blocks ---------------------------


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to zero mean / unit variance (no affine)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor(y, parents=(x,))

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        x._accum(inv * (g - gm - y * gym))

    out._backward = bwd if out.requires_grad else None
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last dimension; -inf entries get exactly zero weight."""
    m = np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=-1, keepdims=True)
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("softmax produced non-finite values (fully masked row?)")
    out = Tensor(y, parents=(x,))

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        x._accum(y * (g - dot))

    out._backward = bwd if out.requires_grad else None
    return out


# -- gather / losses -------------------------------------------------------


def gather(w: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup w[idx]: w (V,d), idx integer array of any shape -> (*idx.shape, d)."""
    out = Tensor(w.data[idx], parents=(w,))

    def bwd(g):
        gw = np.zeros_like(w.data)
        np.add.at(gw, idx.reshape(-1), g.reshape(-1, w.data.shape[-1]))
        w._accum(gw)

    out._backward = bwd if out.requires_grad else None
    return out


def cross_entropy_sum(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Sum over masked positions of -log softmax(logits)[target].

    logits (..., C); targets / mask shaped like logits without the class
    dim. Masked-out positions contribute exactly zero loss and gradient.
    """
    m = np.max(logits.data, axis=-1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=-1)) + m[..., 0]
    safe_t = np.where(mask, targets, 0)
    picked = np.take_along_axis(logits.data, safe_t[..., None], axis=-1)[..., 0]
    nll = np.where(mask, lse - picked, 0.0)
    out = Tensor(np.asarray(nll.sum(), dtype=logits.data.dtype), parents=(logits,))

    def bwd(g):
        p = np.exp(logits.data - m)
        p /= p.sum(axis=-1, keepdims=True)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe_t[..., None], 1.0, axis=-1)
        logits._accum((p - onehot) * mask[..., None] * g)

    out._backward = bwd if out.requires_grad else None
    return out


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=pred.data.dtype)
    diff = pred.data - target
    out = Tensor(np.asarray((diff * diff).mean(), dtype=pred.data.dtype), parents=(pred,))

    def bwd(g):
        pred._accum(g * (2.0 / diff.size) * diff)

    out._backward = bwd if out.requires_grad else None
    return out


# -- reductions / shape ops -------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), parents=(x,))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.data.shape).copy())

    out._backward = bwd if out.requires_grad else None
    return out


def tmean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.data.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), parents=(x,))

    def bwd(g):
        x._accum(g.reshape(x.data.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def transpose(x: Tensor, axes) -> Tensor:
    out = Tensor(np.transpose(x.data, axes), parents=(x,))
    inv = np.argsort(axes)

    def bwd(g):
        x._accum(np.transpose(g, inv))

    out._backward = bwd if out.requires_grad else None
    return out


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        splits = np.cumsum(sizes)[:-1]
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    out._backward = bwd if out.requires_grad else None
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries starting at `start` along `axis`."""
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor(x.data[sl], parents=(x,))

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        x._accum(gx)

    out._backward = bwd if out.requires_grad else None
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rate <= 0 or rng is None (eval mode)."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep))
