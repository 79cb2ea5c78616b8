"""Kernel selection: compiled extension when built, pure Python otherwise.

Set ``EVENTSETS_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("EVENTSETS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

hungarian = _impl.hungarian
soft_nms = _impl.soft_nms
greedy_match = _impl.greedy_match

__all__ = ["BACKEND", "hungarian", "soft_nms", "greedy_match"]
