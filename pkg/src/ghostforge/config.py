"""Process-wide build switches, read once from the environment at import.

GHOSTFORGE_DTYPE    float64 (default) or float32. 64-bit is required for the
                    finite-difference gradient suite and bit-exact training
                    runs; 32-bit is for speed benchmarking.
GHOSTFORGE_BACKEND  numba (default when importable) or numpy. Selects the
                    convolution kernel implementation.
GHOSTFORGE_THREADS  worker thread cap for the numba kernels, default 1 for
                    bit-exact runs. Parallelism is over independent output
                    slices, so results are identical for any thread count.
GHOSTFORGE_DEBUG    1 enables finiteness assertions after every forward op.
"""

import os

import numpy as np

_DTYPES = {"float64": np.float64, "float32": np.float32}

_dtype_name = os.environ.get("GHOSTFORGE_DTYPE", "float64")
if _dtype_name not in _DTYPES:
    raise ValueError(f"GHOSTFORGE_DTYPE must be one of {sorted(_DTYPES)}, got {_dtype_name!r}")

DTYPE = _DTYPES[_dtype_name]
DTYPE_NAME = _dtype_name

BACKEND_REQUESTED = os.environ.get("GHOSTFORGE_BACKEND", "").strip().lower() or None

THREADS = max(1, int(os.environ.get("GHOSTFORGE_THREADS", "1")))

DEBUG = os.environ.get("GHOSTFORGE_DEBUG", "") not in ("", "0")
