"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy twin.
``RANSOMDET_BACKEND=python`` forces the fallback.
"""
import os

from . import _kernels_py

_available = {"python": _kernels_py}
try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
else:
    _available["cython"] = _compiled

_current = _compiled if _compiled is not None else _kernels_py
if os.environ.get("RANSOMDET_BACKEND", "").lower() == "python":
    _current = _kernels_py


def kernels():
    return _current


def name() -> str:
    return _current.NAME


def available() -> list[str]:
    return sorted(_available)


def set_backend(backend: str):
    """Switch the process-wide kernel backend; returns the previous name."""
    global _current
    if backend not in _available:
        raise ValueError(f"backend {backend!r} unavailable (have {available()})")
    prev = _current.NAME
    _current = _available[backend]
    return prev


class use:
    """Context manager form of :func:`set_backend`."""

    def __init__(self, backend: str):
        self.backend = backend

    def __enter__(self):
        self.prev = set_backend(self.backend)
        return kernels()

    def __exit__(self, *exc):
        set_backend(self.prev)
