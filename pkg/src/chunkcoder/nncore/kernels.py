"""Numeric inner-loop kernels with two interchangeable backends.

Every kernel exists in two mathematically identical variants: a numba
``@njit`` version (explicit loops, serial, IEEE-strict) and a vectorized
pure-numpy fallback.  The backend is picked once at import time:

* ``CHUNKCODER_NUMBA=0`` in the environment forces the numpy path,
* otherwise numba is used when it is importable.

``ACTIVE_BACKEND`` records which path won.  ``benchmarks/bench_kernels.py``
times both paths side by side and checks they agree.

All kernels operate on contiguous float64 arrays.  Backward kernels return
fresh arrays; only ``adam_update`` mutates its inputs.
"""

import os

import numpy as np

_want_numba = os.environ.get("CHUNKCODER_NUMBA", "1").lower() not in ("0", "false")

if _want_numba:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        _want_numba = False

ACTIVE_BACKEND = "numba" if _want_numba else "numpy"


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _layer_norm_forward_np(x, gain, shift, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return xhat * gain + shift, xhat, inv_std[:, 0].copy()


def _layer_norm_backward_np(g, xhat, inv_std, gain):
    dgain = (g * xhat).sum(axis=0)
    dshift = g.sum(axis=0)
    dxhat = g * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = inv_std[:, None] * (dxhat - m1 - xhat * m2)
    return dx, dgain, dshift


def _masked_softmax_np(scores, mask):
    # mask is 1.0 on positions allowed to attend, 0.0 elsewhere
    neg = np.where(mask > 0.0, scores, -np.inf)
    rowmax = neg.max(axis=1, keepdims=True)
    # rows that are fully masked would produce -inf max; guard to 0
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.where(mask > 0.0, np.exp(scores - rowmax), 0.0)
    denom = e.sum(axis=1, keepdims=True)
    denom = np.where(denom == 0.0, 1.0, denom)
    return e / denom


def _softmax_backward_np(g, probs):
    dot = (g * probs).sum(axis=1, keepdims=True)
    return probs * (g - dot)


def _prelu_forward_np(x, slope):
    return np.where(x > 0.0, x, x * slope)


def _prelu_backward_np(g, x, slope):
    dx = np.where(x > 0.0, g, g * slope)
    dslope = np.where(x > 0.0, 0.0, g * x).sum(axis=0)
    return dx, dslope


def _bce_forward_np(z, y):
    return float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def _bce_backward_np(z, y, upstream):
    sig = 1.0 / (1.0 + np.exp(-z))
    return (sig - y) * (upstream / z.size)


def _adam_update_np(param, grad, m, v, t, lr, beta1, beta2, eps, weight_decay):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    step = mhat / (np.sqrt(vhat) + eps)
    if weight_decay != 0.0:
        step = step + weight_decay * param
    param -= lr * step


def _scatter_add_rows_np(out, ids, rows):
    np.add.at(out, ids, rows)


# ---------------------------------------------------------------------------
# numba implementations (explicit loops keep the reduction order fixed)
# ---------------------------------------------------------------------------

if _want_numba:

    @njit(cache=True)
    def _layer_norm_forward_nb(x, gain, shift, eps):
        n, d = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        inv_std = np.empty(n)
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                diff = x[i, j] - mu
                var += diff * diff
            var /= d
            s = 1.0 / np.sqrt(var + eps)
            inv_std[i] = s
            for j in range(d):
                h = (x[i, j] - mu) * s
                xhat[i, j] = h
                y[i, j] = h * gain[j] + shift[j]
        return y, xhat, inv_std

    @njit(cache=True)
    def _layer_norm_backward_nb(g, xhat, inv_std, gain):
        n, d = g.shape
        dx = np.empty_like(g)
        dgain = np.zeros(d)
        dshift = np.zeros(d)
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                dgain[j] += g[i, j] * xhat[i, j]
                dshift[j] += g[i, j]
                dxh = g[i, j] * gain[j]
                m1 += dxh
                m2 += dxh * xhat[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                dx[i, j] = inv_std[i] * (g[i, j] * gain[j] - m1 - xhat[i, j] * m2)
        return dx, dgain, dshift

    @njit(cache=True)
    def _masked_softmax_nb(scores, mask):
        n, t = scores.shape
        out = np.zeros_like(scores)
        for i in range(n):
            rowmax = -np.inf
            for j in range(t):
                if mask[i, j] > 0.0 and scores[i, j] > rowmax:
                    rowmax = scores[i, j]
            if rowmax == -np.inf:
                continue
            denom = 0.0
            for j in range(t):
                if mask[i, j] > 0.0:
                    e = np.exp(scores[i, j] - rowmax)
                    out[i, j] = e
                    denom += e
            for j in range(t):
                out[i, j] /= denom
        return out

    @njit(cache=True)
    def _softmax_backward_nb(g, probs):
        n, t = g.shape
        dx = np.empty_like(g)
        for i in range(n):
            dot = 0.0
            for j in range(t):
                dot += g[i, j] * probs[i, j]
            for j in range(t):
                dx[i, j] = probs[i, j] * (g[i, j] - dot)
        return dx

    @njit(cache=True)
    def _prelu_forward_nb(x, slope):
        n, c = x.shape
        y = np.empty_like(x)
        for i in range(n):
            for j in range(c):
                v = x[i, j]
                y[i, j] = v if v > 0.0 else v * slope[j]
        return y

    @njit(cache=True)
    def _prelu_backward_nb(g, x, slope):
        n, c = g.shape
        dx = np.empty_like(g)
        dslope = np.zeros(c)
        for i in range(n):
            for j in range(c):
                if x[i, j] > 0.0:
                    dx[i, j] = g[i, j]
                else:
                    dx[i, j] = g[i, j] * slope[j]
                    dslope[j] += g[i, j] * x[i, j]
        return dx, dslope

    @njit(cache=True)
    def _adam_update_nb(param, grad, m, v, t, lr, beta1, beta2, eps, weight_decay):
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for i in range(param.size):
            mi = beta1 * m[i] + (1.0 - beta1) * grad[i]
            vi = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
            m[i] = mi
            v[i] = vi
            step = (mi / c1) / (np.sqrt(vi / c2) + eps)
            if weight_decay != 0.0:
                step += weight_decay * param[i]
            param[i] -= lr * step

    @njit(cache=True)
    def _scatter_add_rows_nb(out, ids, rows):
        n, d = rows.shape
        for i in range(n):
            row = ids[i]
            for j in range(d):
                out[row, j] += rows[i, j]


if _want_numba:
    layer_norm_forward = _layer_norm_forward_nb
    layer_norm_backward = _layer_norm_backward_nb
    masked_softmax = _masked_softmax_nb
    softmax_backward = _softmax_backward_nb
    prelu_forward = _prelu_forward_nb
    prelu_backward = _prelu_backward_nb
    adam_update = _adam_update_nb
    scatter_add_rows = _scatter_add_rows_nb
else:
    layer_norm_forward = _layer_norm_forward_np
    layer_norm_backward = _layer_norm_backward_np
    masked_softmax = _masked_softmax_np
    softmax_backward = _softmax_backward_np
    prelu_forward = _prelu_forward_np
    prelu_backward = _prelu_backward_np
    adam_update = _adam_update_np
    scatter_add_rows = _scatter_add_rows_np

# always numpy: its SIMD exp/log1p beat a scalar njit loop ~15x here
bce_forward = _bce_forward_np
bce_backward = _bce_backward_np

NUMPY_KERNELS = {
    "layer_norm_forward": _layer_norm_forward_np,
    "layer_norm_backward": _layer_norm_backward_np,
    "masked_softmax": _masked_softmax_np,
    "softmax_backward": _softmax_backward_np,
    "prelu_forward": _prelu_forward_np,
    "prelu_backward": _prelu_backward_np,
    "bce_forward": _bce_forward_np,
    "bce_backward": _bce_backward_np,
    "adam_update": _adam_update_np,
    "scatter_add_rows": _scatter_add_rows_np,
}
