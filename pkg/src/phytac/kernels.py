"""Kernel dispatch: the compiled extension when it is built, numpy otherwise.

Set ``PHYTAC_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

_FORCE_PURE = os.environ.get("PHYTAC_PURE_PYTHON", "") not in ("", "0")

try:
    if _FORCE_PURE:
        raise ImportError("pure python requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

splitmix64_block = _impl.splitmix64_block
rasterize_nearest = _impl.rasterize_nearest
fill_holes = _impl.fill_holes
ssim_mean = _impl.ssim_mean


def compiled_available():
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True
