"""Select the compiled kernels when available.

Set ``EVSI_MM_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py as python_kernels

compiled_kernels = None
if not os.environ.get("EVSI_MM_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_kernels
    except ImportError:
        compiled_kernels = None

kernels = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = "cython" if compiled_kernels is not None else "python"
