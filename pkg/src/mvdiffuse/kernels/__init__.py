"""Hot numeric kernels with selectable backends.

Two interchangeable implementations exist for every kernel:

* ``numba_ops``  -- scalar loops compiled with ``@njit``
* ``numpy_ops``  -- vectorized pure-numpy fallback (BLAS-backed for convs)

The active backend is chosen per call family via the ``MVC_BACKEND``
environment variable:

* ``auto`` (default): numba for ray marching, numpy for convolutions.
  On this split each family runs on the implementation that measures
  faster (see ``benchmarks/bench_kernels.py``): ray marching is a scalar
  while-loop per ray (numba territory), convolutions lower to BLAS
  matmuls that beat jitted loops.
* ``numba``: force numba everywhere.
* ``numpy``: force the pure-numpy fallback everywhere (numba never
  imported).

The selection is made once at import time; set the variable before
importing the package.
"""

import os

from ..errors import ConfigError
from . import numpy_ops

_VALID = ("auto", "numba", "numpy")

_mode = os.environ.get("MVC_BACKEND", "auto").strip().lower()
if _mode not in _VALID:
    raise ConfigError(
        f"MVC_BACKEND must be one of {_VALID}, got {_mode!r}"
    )

if _mode == "numpy":
    _numba_ops = None
else:
    try:
        from . import numba_ops as _numba_ops
    except ImportError:
        if _mode == "numba":
            raise ConfigError("MVC_BACKEND=numba but numba is not importable")
        _numba_ops = None

_conv_impl = _numba_ops if (_mode == "numba" and _numba_ops) else numpy_ops
_march_impl = _numba_ops if (_mode in ("auto", "numba") and _numba_ops) else numpy_ops


def backend_name() -> str:
    """Return the active selection, e.g. ``conv=numpy,march=numba``."""
    conv = "numba" if _conv_impl is _numba_ops else "numpy"
    march = "numba" if _march_impl is _numba_ops else "numpy"
    return f"conv={conv},march={march}"


# Convolution family ---------------------------------------------------------

def conv2d_fwd(x, w, stride, pad):
    return _conv_impl.conv2d_fwd(x, w, stride, pad)


def conv2d_bwd_input(gy, w, stride, pad, h, wdt):
    return _conv_impl.conv2d_bwd_input(gy, w, stride, pad, h, wdt)


def conv2d_bwd_weight(x, gy, stride, pad, kh, kw):
    return _conv_impl.conv2d_bwd_weight(x, gy, stride, pad, kh, kw)


# Ray marching family --------------------------------------------------------

def implicit_value(points, code, params):
    return _march_impl.implicit_value(points, code, params)


def raymarch(origins, dirs, code, params, t0, t1):
    return _march_impl.raymarch(origins, dirs, code, params, t0, t1)


def get_impl(family: str, name: str):
    """Fetch a specific implementation (for benchmarks/tests).

    family: 'conv' or 'march'; name: 'numpy' or 'numba'.
    """
    if name == "numpy":
        return numpy_ops
    if name == "numba":
        from . import numba_ops
        return numba_ops
    raise ConfigError(f"unknown backend {name!r}")
