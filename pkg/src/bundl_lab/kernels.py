"""Backend selection for the MLP hot loops.

The compiled extension is used when it imports cleanly; set
``BUNDL_LAB_PURE=1`` to force the numpy fallback. Both backends take the
same explicit dropout masks, so their outputs agree to rounding.
"""
import os

import numpy as np

from . import _core_py

BACKEND = "python"
_impl = _core_py

if os.environ.get("BUNDL_LAB_PURE") != "1":
    try:
        from . import _core as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"


def _as_c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def use_backend(name):
    """Switch backends at runtime (``"cython"`` or ``"python"``); returns the previous name."""
    global _impl, BACKEND
    previous = BACKEND
    if name == "python":
        _impl = _core_py
    elif name == "cython":
        from . import _core

        _impl = _core
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    return previous


def available_backends():
    names = ["python"]
    try:
        from . import _core  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def _as_mask(m):
    return np.ascontiguousarray(m, dtype=np.bool_).view(np.uint8)


def forward(weights, biases, x, masks=None, scale=1.0):
    """``masks`` holds one 0/1 keep array per hidden layer; kept units are scaled."""
    x = _as_c(x)
    if x.shape[0] == 0:
        return np.empty(0), None
    if masks is not None:
        masks = [None if m is None else _as_mask(m) for m in masks]
    return _impl.forward(list(weights), list(biases), x, masks, float(scale))


def backward(weights, cache, upstream):
    return _impl.backward(list(weights), cache, _as_c(upstream))


def mc_samples(weights, biases, x, masks, n_samples, scale=1.0):
    x = _as_c(x)
    if x.shape[0] == 0:
        return np.empty((n_samples, 0))
    masks = [_as_mask(m) for m in masks]
    return _impl.mc_samples(list(weights), list(biases), x, masks, n_samples, float(scale))
