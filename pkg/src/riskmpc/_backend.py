"""Select the kernel implementation at import time.

The compiled extension is used when it imports cleanly, unless the
environment variable ``RISKMPC_PURE_PYTHON`` is set to a non-empty value
other than ``0``.
"""
import os

from . import _kernels_py

_force_pure = os.environ.get("RISKMPC_PURE_PYTHON", "") not in ("", "0")

kernels = _kernels_py
BACKEND = "python"
if not _force_pure:
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"

jacobi_eigh = kernels.jacobi_eigh
project_cones = kernels.project_cones
