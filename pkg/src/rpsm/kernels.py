"""Backend selection for the hot conv/pool kernels.

Prefers the compiled extension, falls back to pure numpy.  Both produce
bitwise-identical results, so everything downstream (training included)
is reproducible across backends.  Set RPSM_KERNELS=python or =cython to
force a choice; forcing cython raises if the extension is missing.
"""

import os

from rpsm import _kernels_py

_forced = os.environ.get("RPSM_KERNELS", "").lower()

if _forced == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from rpsm import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _kernels_py
        BACKEND = "python"

conv_out_extent = _impl.conv_out_extent
im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
