"""Convolution kernel backend selection.

The numba kernels are the default; set GHOSTFORGE_BACKEND=numpy to force
the pure-numpy im2col path (or it is used automatically when numba is not
importable). benchmarks/bench_backends.py compares the two.
"""

from .. import config

_requested = config.BACKEND_REQUESTED or "numba"
if _requested not in ("numba", "numpy"):
    raise ValueError(f"GHOSTFORGE_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        import warnings

        with warnings.catch_warnings():
            # TBB-version probe warning; numba falls back to another layer.
            warnings.filterwarnings("ignore", message=".*TBB.*")
            from . import numba_backend as _impl
            import numba

            numba.set_num_threads(min(config.THREADS, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        from . import numpy_backend as _impl
else:
    from . import numpy_backend as _impl

BACKEND = _impl.NAME

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weights = _impl.conv2d_backward_weights
