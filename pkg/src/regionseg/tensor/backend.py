"""Kernel backend selection.

The compiled extension is used when it imported cleanly; otherwise the numpy
kernels. ``REGIONSEG_BACKEND=numpy`` (or ``compiled``) forces a choice at
import time, and :func:`use_backend` switches at runtime.
"""
import os
import logging

from . import _numpy_kernels

logger = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled_kernels
except ImportError:  # extension not built
    _compiled_kernels = None

_BACKENDS = {"numpy": _numpy_kernels}
if _compiled_kernels is not None:
    _BACKENDS["compiled"] = _compiled_kernels


def available_backends():
    return sorted(_BACKENDS)


def _initial():
    requested = os.environ.get("REGIONSEG_BACKEND", "").strip().lower()
    if requested:
        if requested not in _BACKENDS:
            raise RuntimeError(f"REGIONSEG_BACKEND={requested!r} is not available "
                               f"(have: {', '.join(available_backends())})")
        return _BACKENDS[requested]
    return _BACKENDS.get("compiled", _numpy_kernels)


kernels = _initial()
logger.debug("using %s kernels", kernels.NAME)


def current_backend():
    return kernels.NAME


def use_backend(name):
    """Switch the active kernel module; returns the previous backend name."""
    global kernels
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    previous = kernels.NAME
    kernels = _BACKENDS[name]
    return previous
