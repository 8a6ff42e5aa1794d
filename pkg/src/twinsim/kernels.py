"""Kernel dispatch: compiled Cython core when built, pure Python otherwise.

Set ``TWINSIM_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"

if not os.environ.get("TWINSIM_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

topic_match = _impl.topic_match
prefix_match = _impl.prefix_match
bin_counts = _impl.bin_counts
nearest_rank = _impl.nearest_rank
step_integral = _impl.step_integral

__all__ = ["BACKEND", "topic_match", "prefix_match", "bin_counts", "nearest_rank", "step_integral"]
