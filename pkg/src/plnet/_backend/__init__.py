"""Backend selection for the hot kernels.

The compiled extension is used when available; otherwise the pure NumPy
fallback. ``PLNET_BACKEND=python`` (or ``c``) forces the choice, which the
benchmark uses to compare the two.
"""

import os

from . import py_core

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_requested = os.environ.get("PLNET_BACKEND", "").strip().lower()
if _requested in ("python", "py"):
    _impl = py_core
elif _requested in ("c", "compiled", "cython"):
    if _core is None:
        raise ImportError(
            "PLNET_BACKEND=c requested but the compiled extension is not built"
        )
    _impl = _core
else:
    _impl = _core if _core is not None else py_core

BACKEND = "c" if _impl is not py_core else "python"

admm_batch = _impl.admm_batch
sigma2_batch = _impl.sigma2_batch
glasso_cd = _impl.glasso_cd


def get_backend(name=None):
    """Return the kernel module for ``name`` ('c', 'python' or None=active)."""
    if name is None or name == BACKEND:
        return _impl
    if name in ("python", "py"):
        return py_core
    if name in ("c", "compiled", "cython"):
        if _core is None:
            raise ValueError("compiled backend is not available")
        return _core
    raise ValueError(f"unknown backend {name!r}")
