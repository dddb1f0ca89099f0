"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a contiguous numpy array plus an optional gradient slot.
Operations record a backward closure and their parent tensors; calling
``backward()`` on a scalar result walks the graph in reverse topological
order and accumulates gradients into every tensor that requires them.

Heavy elementwise math (layer norm, softmax, PReLU, the loss) goes through
the kernels in :mod:`chunkcoder.nncore.kernels`; matrix products stay on
numpy's BLAS.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- backward pass --------------------------------------------------------

    def backward(self, grad=None):
        """Reverse-mode pass from this tensor; ``grad`` defaults to ones."""
        if grad is None:
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# -----------------------------------------------------------------------------
# primitive ops
# -----------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def matmul(a, b):
    """Matrix product; batch dimensions, when present, must match exactly."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    if a.ndim != b.ndim and not (a.ndim > 2 and b.ndim == 2) and not (a.ndim == 2 and b.ndim == 2):
        raise ShapeError(f"unsupported matmul ranks: {a.shape} @ {b.shape}")
    if a.ndim == b.ndim and a.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def tsum(x, axis=None):
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis)

    def backward(g):
        if not x.requires_grad:
            return
        if axis is None:
            x._accumulate(np.full_like(x.data, float(g)))
        else:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return Tensor._from_op(out_data, (x,), backward)


def tmean(x, axis=None):
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis), 1.0 / n)


def reshape(x, shape):
    x = _as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    return Tensor._from_op(out_data, (x,), backward)


def transpose(x, axes):
    x = _as_tensor(x)
    out_data = np.ascontiguousarray(x.data.transpose(axes))
    inverse = np.argsort(axes)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.ascontiguousarray(g.transpose(inverse)))

    return Tensor._from_op(out_data, (x,), backward)


def take(x, key):
    """Basic indexing (ints and slices); gradient scatters into zeros."""
    x = _as_tensor(x)
    out_data = np.ascontiguousarray(x.data[key])

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[key] = g
            x._accumulate(full)

    return Tensor._from_op(out_data, (x,), backward)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(np.ascontiguousarray(g[tuple(idx)]))

    return Tensor._from_op(out_data, tuple(tensors), backward)


# -----------------------------------------------------------------------------
# fused ops backed by kernels
# -----------------------------------------------------------------------------

def layer_norm(x, gain, shift, eps=1e-5):
    """Standardize the last axis per row, then apply the affine (gain, shift)."""
    x, gain, shift = _as_tensor(x), _as_tensor(gain), _as_tensor(shift)
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}/{shift.shape} do not match d={d}")
    rows = x.data.reshape(-1, d)
    y, xhat, inv_std = kernels.layer_norm_forward(rows, gain.data, shift.data, eps)

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgain, dshift = kernels.layer_norm_backward(g2, xhat, inv_std, gain.data)
        if x.requires_grad:
            x._accumulate(dx.reshape(x.shape))
        if gain.requires_grad:
            gain._accumulate(dgain)
        if shift.requires_grad:
            shift._accumulate(dshift)

    return Tensor._from_op(y.reshape(x.shape), (x, gain, shift), backward)


def prelu(x, slope):
    """y = x where x > 0 else slope * x, slope learned per last-axis channel."""
    x, slope = _as_tensor(x), _as_tensor(slope)
    c = x.shape[-1]
    if slope.shape != (c,):
        raise ShapeError(f"prelu slope shape {slope.shape} does not match channels {c}")
    rows = x.data.reshape(-1, c)
    y = kernels.prelu_forward(rows, slope.data)

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(-1, c))
        dx, dslope = kernels.prelu_backward(g2, rows, slope.data)
        if x.requires_grad:
            x._accumulate(dx.reshape(x.shape))
        if slope.requires_grad:
            slope._accumulate(dslope)

    return Tensor._from_op(y.reshape(x.shape), (x, slope), backward)


def masked_softmax(scores, mask):
    """Softmax over the last axis; positions with mask 0 get exactly 0 weight.

    ``mask`` is a plain ndarray broadcastable to ``scores.shape``.
    """
    scores = _as_tensor(scores)
    t = scores.shape[-1]
    mask2 = np.ascontiguousarray(
        np.broadcast_to(mask, scores.shape).reshape(-1, t).astype(np.float64)
    )
    rows = scores.data.reshape(-1, t)
    probs = kernels.masked_softmax(rows, mask2)

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(-1, t))
        if scores.requires_grad:
            scores._accumulate(kernels.softmax_backward(g2, probs).reshape(scores.shape))

    return Tensor._from_op(probs.reshape(scores.shape), (scores,), backward)


def dropout(x, p, training, rng):
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = _as_tensor(x)
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * keep)

    return Tensor._from_op(x.data * keep, (x,), backward)


def embedding(weight, ids):
    """Row lookup ``weight[ids]``; backward scatter-adds into the table."""
    weight = _as_tensor(weight)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(
            f"token id out of range: vocabulary size {weight.shape[0]}, "
            f"ids span [{ids.min()}, {ids.max()}]"
        )
    out_data = weight.data[ids]

    def backward(g):
        if weight.requires_grad:
            dw = np.zeros_like(weight.data)
            flat_ids = np.ascontiguousarray(ids.reshape(-1))
            rows = np.ascontiguousarray(g.reshape(-1, weight.shape[1]))
            kernels.scatter_add_rows(dw, flat_ids, rows)
            weight._accumulate(dw)

    return Tensor._from_op(out_data, (weight,), backward)


def bce_with_logits(logits, targets):
    """Mean binary cross entropy on raw logits, overflow-safe.

    Per element: max(z, 0) - z*y + log(1 + exp(-|z|)).
    """
    logits = _as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"targets shape {y.shape} does not match logits {logits.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("bce_with_logits targets must be 0 or 1")
    z = np.ascontiguousarray(logits.data.reshape(-1))
    yf = np.ascontiguousarray(y.reshape(-1))
    loss = kernels.bce_forward(z, yf)

    def backward(g):
        if logits.requires_grad:
            dz = kernels.bce_backward(z, yf, float(g))
            logits._accumulate(dz.reshape(logits.shape))

    return Tensor._from_op(np.float64(loss), (logits,), backward)


def sigmoid_array(z):
    """Plain (non-differentiable) sigmoid for prediction time."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out
