"""Pick the SMO loop implementation at import time.

The compiled kernel is used when it was built; setting ``SVFED_PURE_PYTHON=1``
forces the NumPy fallback.
"""
import os

from . import _smo_py

try:
    from . import _smo_ext
except ImportError:  # extension not built
    _smo_ext = None

LOOPS = {"python": _smo_py.smo_loop}
if _smo_ext is not None:
    LOOPS["cython"] = _smo_ext.smo_loop

if os.environ.get("SVFED_PURE_PYTHON", "").strip() not in ("", "0") or _smo_ext is None:
    BACKEND = "python"
else:
    BACKEND = "cython"


def get_loop(name=None):
    name = name or BACKEND
    try:
        return LOOPS[name]
    except KeyError:
        raise ValueError(f"SMO backend {name!r} unavailable; have {sorted(LOOPS)}") from None
