"""Kernel backend selection.

The compiled extension ``_ckernels`` is used when it was built; otherwise the
numpy implementations in ``_pykernels``. Setting the environment variable
``RFNET_PURE_PYTHON=1`` forces the numpy path.
"""

import importlib
import os

from . import _pykernels

__all__ = ["BACKEND", "get_backend", "rectify_normalize", "estep_objective", "reduced_direction"]


def _load_compiled():
    try:
        return importlib.import_module("rfnet._ckernels")
    except ImportError:
        return None


_compiled = None if os.environ.get("RFNET_PURE_PYTHON") else _load_compiled()
_impl = _compiled if _compiled is not None else _pykernels
BACKEND = "cython" if _compiled is not None else "python"


def get_backend(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        mod = _load_compiled()
        if mod is None:
            raise ImportError("rfnet._ckernels is not built; run `pip install -e . --no-build-isolation`")
        return mod
    raise ValueError(f"unknown backend {name!r}")


rectify_normalize = _impl.rectify_normalize
estep_objective = _impl.estep_objective
reduced_direction = _impl.reduced_direction
