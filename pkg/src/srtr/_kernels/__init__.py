"""Hot kernels: compiled when the extension built, pure Python otherwise.

Set ``SRTR_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the
implementation in use.
"""

import os

from . import _pykernels as python

compiled = None
if os.environ.get("SRTR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

linear_sum_assignment = _impl.linear_sum_assignment
bilinear_pool_matrix = _impl.bilinear_pool_matrix
bilinear_pool_jacobian = _impl.bilinear_pool_jacobian
pairwise_iou = _impl.pairwise_iou

__all__ = [
    "BACKEND", "bilinear_pool_jacobian", "bilinear_pool_matrix", "linear_sum_assignment",
    "pairwise_iou",
]
