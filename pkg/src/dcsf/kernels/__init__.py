"""Convolution kernel backends.

The compiled Cython extension is preferred when it imported cleanly; the
numpy implementation is the fallback.  Set ``DCSF_KERNELS=numpy`` or
``DCSF_KERNELS=cython`` to force a backend (forcing ``cython`` raises if the
extension is missing).  Both backends implement the identical contract and
agree within floating-point summation order; ``benchmarks/bench_kernels.py``
compares their speed.
"""

import os

from . import _conv_np

_requested = os.environ.get("DCSF_KERNELS", "auto").lower()
if _requested not in ("auto", "cython", "numpy"):
    raise ValueError(f"DCSF_KERNELS must be 'cython' or 'numpy', got {_requested!r}")

# imported under an alias: pre-binding the submodule's own name would make
# the from-import skip loading and hand back the sentinel
_cython_impl = None
if _requested in ("auto", "cython"):
    try:
        from . import _conv_cy as _cython_impl
    except ImportError:
        if _requested == "cython":
            raise

if _cython_impl is not None:
    BACKEND = "cython"
    _impl = _cython_impl
else:
    BACKEND = "numpy"
    _impl = _conv_np


def conv1d_forward(x, w, b, pad_left):
    """Batched 1-D cross-correlation, (B,C_in,L) x (C_out,C_in,k) -> (B,C_out,L)."""
    return _impl.conv1d_forward(x, w, b, pad_left)


def conv1d_backward(x, w, gy, pad_left):
    """Gradients (gx, gw, gb) of conv1d_forward."""
    return _impl.conv1d_backward(x, w, gy, pad_left)
