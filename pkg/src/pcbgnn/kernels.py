"""Kernel backend selection.

Imports the compiled extension when available; falls back to the pure-numpy
implementation otherwise. Set PCBGNN_PURE_PYTHON=1 to force the fallback
(used by the benchmark and for debugging).
"""

from __future__ import annotations

import os

if os.environ.get("PCBGNN_PURE_PYTHON"):
    from . import _kernels_np as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _speedups as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_np as _impl

        BACKEND = "numpy"

scatter_add_rows = _impl.scatter_add_rows
scatter_add_rows_fast = _impl.scatter_add_rows_fast
segment_max = _impl.segment_max
