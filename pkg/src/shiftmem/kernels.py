"""Kernel backend selection.

The compiled extension is preferred; set ``SHIFTMEM_PURE_PYTHON=1`` to force
the numpy implementations (the benchmark and the equivalence tests flip
between both through :func:`get_backend`).
"""
import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

if os.environ.get("SHIFTMEM_PURE_PYTHON", "") not in ("", "0") or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "compiled"


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    name = name or BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {available_backends()}") from None


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def entropy_batch(gray, bins, backend=None):
    return get_backend(backend).entropy_batch(_f64(gray), int(bins))


def shift_batch(patches, dy, dx, backend=None):
    return get_backend(backend).shift_batch(_f64(patches), _i64(dy), _i64(dx))


def blur_batch(patches, sigma, backend=None):
    return get_backend(backend).blur_batch(_f64(patches), _f64(sigma))
