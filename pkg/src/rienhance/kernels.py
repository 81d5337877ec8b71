"""Backend selection for the hot kernels.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback is used. Set ``RI_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("RI_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

proximity_batch = _impl.proximity_batch
spatial_conv_forward = _impl.spatial_conv_forward
spatial_conv_backward = _impl.spatial_conv_backward

__all__ = ["BACKEND", "proximity_batch", "spatial_conv_forward", "spatial_conv_backward"]
