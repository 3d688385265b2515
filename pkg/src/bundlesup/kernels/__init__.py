"""Numeric kernels with a compiled fast path and a NumPy fallback.

The Cython extension is preferred when it has been built; otherwise the
NumPy implementations are used transparently. Set BUNDLESUP_KERNELS to
"numpy" or "compiled" to force a backend.
"""

import os

from . import _numpy_backend

_requested = os.environ.get("BUNDLESUP_KERNELS", "").strip().lower()

_compiled = None
if _requested != "numpy":
    try:
        from . import _speedups as _compiled
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "BUNDLESUP_KERNELS=compiled but the extension is not built; "
                "run `pip install -e .` or `python setup.py build_ext --inplace`"
            ) from None
        _compiled = None

if _compiled is not None:
    BACKEND = "compiled"
    _impl = _compiled
else:
    BACKEND = "numpy"
    _impl = _numpy_backend

spmm = _impl.spmm
bfs_levels = _impl.bfs_levels


def backends():
    """Name -> module for every importable backend (used by the benchmark)."""
    out = {"numpy": _numpy_backend}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
