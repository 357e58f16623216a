"""Stop-ordering search kernels: compiled extension with a pure-Python fallback.

The compiled kernel is selected automatically when the extension built; set
RIDEPOOL_PURE=1 to force the fallback (used by the cross-check tests and the
kernel benchmark).
"""

import os

from . import _vrp_py

if os.environ.get("RIDEPOOL_PURE") == "1":
    _impl = _vrp_py
    KERNEL = "python"
else:
    try:
        from . import _vrp_c as _impl  # type: ignore[attr-defined]

        KERNEL = "compiled"
    except ImportError:
        _impl = _vrp_py
        KERNEL = "python"

solve_stop_order = _impl.solve_stop_order

__all__ = ["solve_stop_order", "KERNEL"]
