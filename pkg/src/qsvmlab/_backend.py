"""Selects the compiled (numba) or pure-numpy implementation of the hot kernels.

Set ``QSVMLAB_DISABLE_JIT=1`` to force the numpy path. The numba path is used
whenever numba imports cleanly and the flag is unset.
"""

import os

_DISABLED = os.environ.get("QSVMLAB_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("jit disabled by QSVMLAB_DISABLE_JIT")
    from . import _kernels_numba as kernels  # noqa: F401

    NAME = "numba"
except ImportError:
    from . import _kernels_numpy as kernels  # noqa: F401

    NAME = "numpy"

__all__ = ["kernels", "NAME"]
