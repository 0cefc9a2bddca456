"""Hot-kernel backend selection.

Two interchangeable kernel modules exist: numba-jitted loops and pure numpy.
The active one is picked from the environment variable ``LATENTGUARD_BACKEND``
(``"numba"`` or ``"numpy"``) at first use; the default is numba when it
imports cleanly, numpy otherwise. ``set_backend`` overrides the choice at
runtime (used by tests and the kernel benchmark).
"""

from __future__ import annotations

import os

from .exceptions import ConfigError

ENV_VAR = "LATENTGUARD_BACKEND"
_VALID = ("numba", "numpy")

_active: str | None = None


def _import_kernels(name: str):
    if name == "numpy":
        from . import kernels_numpy as mod
    else:
        from . import kernels_numba as mod
    return mod


def _resolve_initial() -> str:
    requested = os.environ.get(ENV_VAR, "").strip().lower()
    if requested:
        if requested not in _VALID:
            raise ConfigError(
                f"{ENV_VAR}={requested!r} is not a valid backend; expected one of {_VALID}"
            )
        return requested
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        return "numpy"


def active_backend() -> str:
    """Return the name of the backend currently in use."""
    global _active
    if _active is None:
        _active = _resolve_initial()
    return _active


def set_backend(name: str) -> None:
    """Force a backend, bypassing the environment variable."""
    global _active
    if name not in _VALID:
        raise ConfigError(f"unknown backend {name!r}; expected one of {_VALID}")
    _active = name


def get_kernels():
    """Return the active kernel module."""
    return _import_kernels(active_backend())
