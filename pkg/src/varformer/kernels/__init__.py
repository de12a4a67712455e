"""Hot numeric kernels with two interchangeable backends.

``VARFORMER_KERNELS`` picks the implementation at import time:

* ``numba`` — JIT-compiled loops (default when numba is importable)
* ``numpy`` — pure-numpy fallback

Both backends compute the same math in the same reduction order;
``benchmarks/kernel_benchmark.py`` compares their speed. Matrix
products are not here: both backends use numpy's BLAS-backed matmul.
"""

import os

_requested = os.environ.get("VARFORMER_KERNELS", "").strip().lower()
if _requested not in ("", "numpy", "numba"):
    raise RuntimeError(
        f"VARFORMER_KERNELS must be 'numpy' or 'numba', got {_requested!r}")

if _requested == "numpy":
    from . import numpy_backend as _impl
    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import numpy_backend as _impl
        BACKEND = "numpy"

gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
softmax_rows = _impl.softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
layernorm_rows = _impl.layernorm_rows
layernorm_rows_backward = _impl.layernorm_rows_backward
sq_diff_mean = _impl.sq_diff_mean
adam_update = _impl.adam_update
