"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
reference implementation is loaded. Set ``SDCE_KERNELS=python`` to force the
fallback (the benchmark and the cross-backend tests do this explicitly).
"""
from __future__ import annotations

import os

from sdce import _kernels_py
from sdce._kernels_py import FlowStepError

_impl = _kernels_py
if os.environ.get("SDCE_KERNELS", "").lower() != "python":
    try:
        from sdce import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND
# elementwise kernels are numpy in both backends
cobb_douglas = _kernels_py.cobb_douglas
softmax = _kernels_py.softmax
loo_matrix = _impl.loo_matrix
price_gradients = _impl.price_gradients
gaussian_flow = _impl.gaussian_flow

__all__ = [
    "BACKEND",
    "FlowStepError",
    "cobb_douglas",
    "softmax",
    "loo_matrix",
    "price_gradients",
    "gaussian_flow",
    "python_backend",
]


def python_backend():
    """Return the pure numpy kernel module regardless of the active backend."""
    return _kernels_py
