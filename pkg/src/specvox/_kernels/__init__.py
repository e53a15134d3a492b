"""Batched ray kernels with a compiled core and a numpy fallback.

The compiled extension is used when importable; set ``SPECVOX_BACKEND=python``
to force the fallback. Both expose ``render_rays`` and ``train_rays``.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

_requested = os.environ.get("SPECVOX_BACKEND", "").strip().lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(f"SPECVOX_BACKEND={_requested!r} is not available; have {sorted(BACKENDS)}")
BACKEND = _requested or ("cython" if _ckernels is not None else "python")


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the selected backend)."""
    return BACKENDS[name or BACKEND]
