"""Benchmark the numba kernels against the pure-numpy fallbacks.

Runs every kernel on representative shapes with both backends, reports
timings and the speedup, and checks the two paths agree numerically.

    python benchmarks/bench_kernels.py [--repeats 200]

The active backend for the library itself is chosen at import time from
the CHUNKCODER_NUMBA environment variable; this script imports both
implementations directly, so it works regardless of that setting (it
skips the numba side when numba is unavailable).
"""

import argparse
import time

import numpy as np

from chunkcoder.nncore import kernels
from chunkcoder.nncore.kernels import NUMPY_KERNELS


def _timeit(fn, args, repeats):
    fn(*args)  # warm up (and trigger JIT compilation)
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def _cases(rng):
    x = rng.normal(size=(2048, 64))
    gain, shift = rng.normal(size=64), rng.normal(size=64)
    g = rng.normal(size=(2048, 64))
    scores = rng.normal(size=(4096, 64))
    mask = (rng.random((4096, 64)) > 0.2).astype(float)
    mask[:, 0] = 1.0
    probs = NUMPY_KERNELS["masked_softmax"](scores, mask)
    z = rng.normal(size=65536)
    y = (rng.random(65536) > 0.5).astype(float)
    param = rng.normal(size=262144)
    grad = rng.normal(size=262144)
    ids = rng.integers(0, 2000, size=8192)
    rows = rng.normal(size=(8192, 64))

    yield "layer_norm_forward", (x, gain, shift, 1e-5)
    yield "layer_norm_backward", (g, *NUMPY_KERNELS["layer_norm_forward"](x, gain, shift, 1e-5)[1:], gain)
    yield "masked_softmax", (scores, mask)
    yield "softmax_backward", (np.ascontiguousarray(g.repeat(2, 0)), probs[:4096])
    yield "prelu_forward", (x, np.full(64, 0.25))
    yield "prelu_backward", (g, x, np.full(64, 0.25))
    yield "bce_forward", (z, y)
    yield "bce_backward", (z, y, 1.0)
    yield "adam_update", (param.copy(), grad, np.zeros_like(param),
                          np.zeros_like(param), 1, 1e-3, 0.9, 0.999, 1e-8, 1e-3)
    yield "scatter_add_rows", (np.zeros((2000, 64)), ids, rows)


def _agreement(name, args):
    """Max absolute difference between the two backends on fresh inputs."""
    if kernels.ACTIVE_BACKEND != "numba":
        return 0.0
    args_a = tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)
    args_b = tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)
    out_a = getattr(kernels, name)(*args_a)
    out_b = NUMPY_KERNELS[name](*args_b)
    if name in ("adam_update", "scatter_add_rows"):  # in-place kernels
        out_a, out_b = args_a[0], args_b[0]
    if not isinstance(out_a, tuple):
        out_a, out_b = (out_a,), (out_b,)
    return max(np.max(np.abs(np.asarray(a) - np.asarray(b)))
               for a, b in zip(out_a, out_b))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    print(f"active backend: {kernels.ACTIVE_BACKEND}")
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}{'max diff':>11}")
    for name, call_args in _cases(rng):
        t_np = _timeit(NUMPY_KERNELS[name], call_args, args.repeats) * 1e3
        active = getattr(kernels, name)
        if kernels.ACTIVE_BACKEND == "numba" and active is not NUMPY_KERNELS[name]:
            t_nb = _timeit(active, call_args, args.repeats) * 1e3
            diff = _agreement(name, call_args)
            print(f"{name:<22}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x{diff:>11.2e}")
        else:
            print(f"{name:<22}{t_np:>10.3f}{'numpy':>10}{'-':>9}{'-':>11}")


if __name__ == "__main__":
    main()
