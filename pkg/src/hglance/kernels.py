"""Backend selection for the hot ray-casting kernel.

The compiled extension is used when importable; ``HGLANCE_PURE=1`` forces the
numpy fallback.
"""

import os

from . import _raycast_py

BACKEND = "python"
first_hits = _raycast_py.first_hits

if os.environ.get("HGLANCE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        first_hits = _kernels.first_hits
        BACKEND = "cython"

__all__ = ["BACKEND", "first_hits"]
