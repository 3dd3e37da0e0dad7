"""Computational kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when importable; setting the
environment variable ``APXHOMOG_FORCE_PY`` (to anything) forces the
numpy implementations.  ``BACKEND`` records the choice.
"""

import os

from . import pykernels

if os.environ.get("APXHOMOG_FORCE_PY"):
    _impl = pykernels
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = pykernels
        BACKEND = "python"

local_stiffness = _impl.local_stiffness
local_load = _impl.local_load
energy_bilinear = _impl.energy_bilinear
rho_scan = _impl.rho_scan

__all__ = [
    "BACKEND",
    "local_stiffness",
    "local_load",
    "energy_bilinear",
    "rho_scan",
    "pykernels",
]
