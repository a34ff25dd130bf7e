"""Kernel backend selection.

The coordinate-wise criterion kernels exist twice: a numba ``@njit``
implementation (hot path, compiled on first use) and a pure-numpy
fallback with identical arithmetic. The active backend is chosen by the
``SSVI_BACKEND`` environment variable:

* ``auto`` (default) - numba when importable, numpy otherwise
* ``numba``          - require numba, raise if missing
* ``numpy``          - force the fallback

``set_backend`` switches at runtime (used by the benchmark and tests).
Runs are bit-reproducible per backend; the two backends agree to
floating-point roundoff, not bit-for-bit.
"""

from __future__ import annotations

import importlib
import os
from types import ModuleType

from .errors import BackendError

ENV_VAR = "SSVI_BACKEND"
_VALID = ("auto", "numba", "numpy")

_active_name: str | None = None
_active_module: ModuleType | None = None


def _numba_available() -> bool:
    try:
        importlib.import_module("numba")
    except ImportError:
        return False
    return True


def resolve_name(choice: str | None = None) -> str:
    """Map an env/user choice onto a concrete backend name."""
    if choice is None:
        choice = os.environ.get(ENV_VAR, "auto")
    choice = choice.strip().lower()
    if choice not in _VALID:
        raise BackendError(
            f"{ENV_VAR}={choice!r} invalid; expected one of {_VALID}"
        )
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _numba_available():
            raise BackendError("backend 'numba' requested but numba is not importable")
        return "numba"
    return "numba" if _numba_available() else "numpy"


def set_backend(name: str) -> str:
    """Activate a backend by name ('auto', 'numba' or 'numpy')."""
    global _active_name, _active_module
    resolved = resolve_name(name)
    module = importlib.import_module(
        "._criteria_numba" if resolved == "numba" else "._criteria_numpy",
        package=__package__,
    )
    _active_name = resolved
    _active_module = module
    return resolved


def active_backend() -> ModuleType:
    """Kernel module currently in use (resolves the env flag on first call)."""
    if _active_module is None:
        set_backend(os.environ.get(ENV_VAR, "auto"))
    assert _active_module is not None
    return _active_module


def active_backend_name() -> str:
    if _active_name is None:
        active_backend()
    assert _active_name is not None
    return _active_name
