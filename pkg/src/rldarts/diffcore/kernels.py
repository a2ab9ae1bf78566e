"""Backend selection for the patch kernels.

The compiled extension is used when it imports; otherwise the NumPy
fallback. ``RLDARTS_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _fallback

BACKEND = "numpy"
im2col = _fallback.im2col
col2im = _fallback.col2im

if os.environ.get("RLDARTS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        im2col = _kernels.im2col
        col2im = _kernels.col2im
        BACKEND = "cython"


def use_backend(name: str) -> None:
    """Switch kernels at runtime (benchmarks and equivalence tests)."""
    global im2col, col2im, BACKEND
    if name == "numpy":
        im2col, col2im = _fallback.im2col, _fallback.col2im
    elif name == "cython":
        from . import _kernels
        im2col, col2im = _kernels.im2col, _kernels.col2im
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    BACKEND = name
