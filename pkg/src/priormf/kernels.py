"""Backend selection for the per-block kernels.

The compiled module ``_ckernels`` is used when it imports; otherwise the
numpy module ``_pykernels`` takes over.  Set ``PRIORMF_KERNELS=python`` to
force the fallback, or ``PRIORMF_KERNELS=cython`` to fail loudly when the
extension is missing.
"""

import importlib
import logging
import os
from contextlib import contextmanager

from . import _pykernels

_log = logging.getLogger(__name__)

KIND_CODES = {"sl": 0, "al": 1, "gkl": 2}
GKL_EPS = 1e-12


def _load(name):
    if name == "python":
        return _pykernels
    if name == "cython":
        return importlib.import_module("priormf._ckernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available():
    """Names of the backends that can be loaded in this environment."""
    names = ["python"]
    try:
        _load("cython")
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def _initial():
    choice = os.environ.get("PRIORMF_KERNELS", "auto").lower()
    if choice == "auto":
        try:
            return _load("cython")
        except ImportError:
            _log.info("compiled kernels unavailable, using numpy fallback")
            return _pykernels
    return _load(choice)


_active = _initial()


def backend():
    """The active kernel module."""
    return _active


def backend_name():
    return "python" if _active is _pykernels else "cython"


def set_backend(name):
    """Switch the active backend (``"python"`` or ``"cython"``)."""
    global _active
    _active = _load(name)


@contextmanager
def using(name):
    global _active
    prev = _active
    _active = _load(name)
    try:
        yield _active
    finally:
        _active = prev
