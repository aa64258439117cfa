"""Hot kernels: attention forward/backward, span decoding, row scatter-add.

The compiled ``_ckernels`` extension is used when it was built; otherwise
the numpy fallback in ``_pykernels`` is used.  Setting ``ADE_PURE_PYTHON=1``
forces the fallback.  ``BACKEND`` names the active implementation.
"""

import os

from . import _pykernels

try:
    if os.environ.get("ADE_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("fallback forced by ADE_PURE_PYTHON")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

attention_forward = _impl.attention_forward
attention_backward = _impl.attention_backward
decode_span = _impl.decode_span
scatter_add_rows = _impl.scatter_add_rows

__all__ = ["BACKEND", "attention_forward", "attention_backward", "decode_span", "scatter_add_rows"]
