"""Hot-kernel backend selection.

The convolution and pooling inner loops dominate training time, so they
exist twice: a Cython extension (``ftcnn.kernels._fast``) and a numpy
fallback (``ftcnn.kernels.reference``).  The compiled backend is used when
it imports; set ``FTCNN_KERNELS=python`` or ``FTCNN_KERNELS=cython`` to
force one.  ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

from ..errors import ConfigError
from . import reference

try:
    from . import _fast as _compiled
except ImportError:  # extension not built; numpy fallback covers everything
    _compiled = None

_ENV_VAR = "FTCNN_KERNELS"


def available_backends() -> tuple[str, ...]:
    return ("python", "cython") if _compiled is not None else ("python",)


def get_backend(name: str):
    """Return the kernel module for an explicit backend name."""
    if name == "python":
        return reference
    if name == "cython":
        if _compiled is None:
            raise ConfigError("compiled kernels are not available in this install")
        return _compiled
    raise ConfigError(f"unknown kernel backend {name!r}")


def _select():
    choice = os.environ.get(_ENV_VAR, "auto")
    if choice == "auto":
        name = "cython" if _compiled is not None else "python"
        return get_backend(name), name
    return get_backend(choice), choice


_impl, BACKEND = _select()

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward

__all__ = [
    "BACKEND",
    "available_backends",
    "get_backend",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool_forward",
    "maxpool_backward",
]
