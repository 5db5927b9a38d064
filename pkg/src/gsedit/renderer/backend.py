"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; the NumPy
implementation is the fallback and the reference for equivalence tests.
Set GSEDIT_BACKEND=numpy (or cython) to force one, e.g. for benchmarks.
"""

import os

from . import _kernels_np

try:
    from . import _kernels_cy
except ImportError:  # pragma: no cover - depends on build environment
    _kernels_cy = None

_BACKENDS = {"numpy": _kernels_np}
if _kernels_cy is not None:
    _BACKENDS["cython"] = _kernels_cy

_forced = os.environ.get("GSEDIT_BACKEND", "").strip().lower()
if _forced and _forced not in _BACKENDS:
    raise ImportError(f"GSEDIT_BACKEND={_forced!r} requested but not available")

_active = _forced or ("cython" if "cython" in _BACKENDS else "numpy")


def active_backend():
    return _active


def available_backends():
    return tuple(sorted(_BACKENDS))


def get_kernels(name=None):
    return _BACKENDS[name or _active]


def set_backend(name):
    """Switch the process-wide default backend; returns the previous one."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})")
    prev = _active
    _active = name
    return prev
