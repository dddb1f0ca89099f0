"""Test-session setup: pin BLAS to one thread.

The pipeline's matrices are small (64-wide encoders, <=2048-wide decoder
layers); OpenBLAS multithreading only adds contention, especially under the
process-parallel acceptance fixtures. Limits apply before numpy spins up a
pool where possible, with threadpoolctl as the runtime fallback.
"""

import os

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

try:
    from threadpoolctl import threadpool_limits

    threadpool_limits(limits=1)
except ImportError:
    pass
