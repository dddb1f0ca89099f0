"""Adam with decoupled weight decay, plus the linear-decay learning schedule."""

from __future__ import annotations

import numpy as np

from . import kernels


class AdamState:
    """Per-parameter first/second moment buffers and the shared step counter.

    Weight decay is decoupled (theta <- theta - lr * wd * theta) and applied
    only to rank >= 2 parameters, i.e. weight matrices and embedding tables;
    biases, norm affines and PReLU slopes are never decayed.
    """

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.params = dict(named_params)
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}


def adam_step(state, lr_now=None):
    """One bias-corrected Adam update over every tracked parameter.

    Raises if a parameter has no gradient: stepping a half-backwarded model
    is always a bug.
    """
    lr = state.lr if lr_now is None else lr_now
    state.step_count += 1
    for name, p in state.params.items():
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
        wd = state.weight_decay if p.data.ndim >= 2 else 0.0
        kernels.adam_update(
            p.data.reshape(-1),
            np.ascontiguousarray(p.grad.reshape(-1)),
            state.m[name].reshape(-1),
            state.v[name].reshape(-1),
            state.step_count,
            lr,
            state.beta1,
            state.beta2,
            state.eps,
            wd,
        )


def lr_schedule(base_lr, epoch, decay_epochs=30, floor_fraction=0.1):
    """Linear decay from base_lr to floor_fraction*base_lr, then hold.

    lr(0) = base_lr, lr(decay_epochs and beyond) = floor_fraction * base_lr.
    """
    if decay_epochs < 1:
        raise ValueError("decay_epochs must be >= 1")
    frac = min(epoch, decay_epochs) / decay_epochs
    return base_lr * (1.0 - (1.0 - floor_fraction) * frac)
