"""Linearization backend selection.

The compiled extension is preferred when importable; the vectorized NumPy
implementation is the fallback.  Set ``EPISLAM_BACKEND=python`` or
``=cython`` to force a choice (forcing cython raises if the extension is
missing).
"""

from __future__ import annotations

import os

from ..errors import ConfigurationError
from . import _backend_py

_backend = None


def _select():
    forced = os.environ.get("EPISLAM_BACKEND", "").strip().lower()
    if forced == "python":
        return _backend_py
    try:
        from . import _backend_c  # compiled extension, optional
    except ImportError:
        _backend_c = None
    if forced == "cython":
        if _backend_c is None:
            raise ConfigurationError("EPISLAM_BACKEND=cython but the extension is not built")
        return _backend_c
    if forced and forced not in ("python", "cython"):
        raise ConfigurationError(f"unknown EPISLAM_BACKEND value {forced!r}")
    return _backend_c if _backend_c is not None else _backend_py


def get_backend():
    global _backend
    if _backend is None:
        _backend = _select()
    return _backend


def backend_name() -> str:
    return get_backend().name


def available_backends():
    out = {"python": _backend_py}
    try:
        from . import _backend_c

        out["cython"] = _backend_c
    except ImportError:
        pass
    return out
