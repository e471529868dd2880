"""Honor RG_THREADS before numpy loads its BLAS thread pools.

BLAS libraries read their thread-count environment variables at import time,
so this module must be imported ahead of numpy. Setting RG_THREADS=1 gives
serial, run-to-run stable execution; unset leaves the library defaults alone.
"""

import os

_n = os.environ.get("RG_THREADS")
if _n:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, _n)
