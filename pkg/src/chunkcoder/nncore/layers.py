"""Layers used by the encoder and decoder models.

A light ``Module`` container tracks parameters by dotted path so checkpoints
and the optimizer can address them by name.  Initialization follows one
recipe everywhere: weights uniform in +/- sqrt(1/fan_in), biases zero,
PReLU slopes 0.25, norm gains one.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    bce_with_logits,
    dropout,
    embedding,
    layer_norm,
    masked_softmax,
    matmul,
    prelu,
)

__all__ = [
    "Module",
    "ModuleList",
    "Parameter",
    "Dense",
    "LayerNorm",
    "PReLU",
    "Dropout",
    "Embedding",
    "MultiHeadAttention",
    "TransformerLayer",
    "bce_with_logits",
]


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Container of parameters and child modules, addressable by dotted name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, (Module, ModuleList)):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def parameter_count(self):
        return sum(p.data.size for p in self.parameters())

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter {name}: checkpoint shape {arr.shape} != model {p.data.shape}")
            p.data = np.ascontiguousarray(arr)


class ModuleList:
    def __init__(self, modules=()):
        self._items = list(modules)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def append(self, module):
        self._items.append(module)

    def named_parameters(self, prefix=""):
        for i, m in enumerate(self._items):
            yield from m.named_parameters(f"{prefix}{i}.")


def _init_weight(rng, fan_in, shape):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense(Module):
    """Affine map on the last axis: y = x W + b."""

    def __init__(self, in_dim, out_dim, rng, bias=True):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(_init_weight(rng, in_dim, (in_dim, out_dim)))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x):
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"dense expects input dim {self.in_dim}, got shape {x.shape}")
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Parameter(np.ones(dim))
        self.shift = Parameter(np.zeros(dim))

    def __call__(self, x):
        return layer_norm(x, self.gain, self.shift, self.eps)


class PReLU(Module):
    def __init__(self, channels, init_slope=0.25):
        super().__init__()
        self.slope = Parameter(np.full(channels, init_slope))

    def __call__(self, x):
        return prelu(x, self.slope)


class Dropout(Module):
    def __init__(self, p):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def __call__(self, x, training=False, rng=None):
        return dropout(x, self.p, training, rng)


class Embedding(Module):
    def __init__(self, count, dim, rng):
        super().__init__()
        self.weight = Parameter(_init_weight(rng, dim, (count, dim)))

    def __call__(self, ids):
        return embedding(self.weight, ids)


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention with h heads of width d/h.

    ``last_attn`` keeps the attention weights of the most recent forward
    pass (detached) so tests can assert on masked rows.
    """

    def __init__(self, d, heads, rng):
        super().__init__()
        if d % heads != 0:
            raise ShapeError(f"model dim {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.head_dim = d // heads
        self.wq = Dense(d, d, rng)
        # a key bias shifts every score in a row equally, which the row
        # softmax cancels, so it is omitted
        self.wk = Dense(d, d, rng, bias=False)
        self.wv = Dense(d, d, rng)
        self.wo = Dense(d, d, rng)
        self.last_attn = None

    def __call__(self, x, mask):
        b, t, d = x.shape
        if d != self.d:
            raise ShapeError(f"attention expects dim {self.d}, got {d}")

        def split_heads(z):
            return z.reshape(b, t, self.heads, self.head_dim).transpose((0, 2, 1, 3))

        q = split_heads(self.wq(x))
        k = split_heads(self.wk(x))
        v = split_heads(self.wv(x))
        scores = matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim))
        # keys at padded positions are hidden from every query
        key_mask = np.asarray(mask, dtype=np.float64).reshape(b, 1, 1, t)
        attn = masked_softmax(scores, key_mask)
        self.last_attn = attn.data.copy()
        ctx = matmul(attn, v).transpose((0, 2, 1, 3)).reshape(b, t, d)
        return self.wo(ctx)


class TransformerLayer(Module):
    """Pre-norm block: x + MHA(LN(x)), then x + FFN(LN(x)).

    FFN is dense(d -> ffn_mult*d), PReLU, dense(back to d); dropout is
    applied to both residual branches while training.
    """

    def __init__(self, d, heads, rng, p_drop=0.1, ffn_mult=4):
        super().__init__()
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.ffn_in = Dense(d, ffn_mult * d, rng)
        self.ffn_act = PReLU(ffn_mult * d)
        self.ffn_out = Dense(ffn_mult * d, d, rng)
        self.drop = Dropout(p_drop)

    def __call__(self, x, mask, training=False, rng=None):
        h = x + self.drop(self.attn(self.ln1(x), mask), training, rng)
        f = self.ffn_out(self.ffn_act(self.ffn_in(self.ln2(h))))
        return h + self.drop(f, training, rng)
