"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np


def grad_check(loss_fn, named_params, step=1e-5, max_coords_per_param=None, rng=None):
    """Compare analytic gradients of ``loss_fn`` with central differences.

    ``loss_fn`` must rebuild the graph and return a scalar Tensor each call;
    it is evaluated once for the analytic pass and twice per probed
    coordinate for (f(theta+s) - f(theta-s)) / 2s.  When a parameter is
    large, ``max_coords_per_param`` caps how many coordinates are probed
    (chosen by ``rng``).

    Returns {parameter name: max relative error}, where relative error is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    params = dict(named_params)
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n_coords = flat.size
        if max_coords_per_param is not None and n_coords > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n_coords, size=max_coords_per_param, replace=False)
        else:
            coords = range(n_coords)
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = loss_fn().item()
            flat[i] = orig - step
            f_minus = loss_fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
        report[name] = worst
    return report
