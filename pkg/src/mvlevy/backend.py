"""Kernel backend selection.

The compiled module is used when importable unless ``MVLEVY_PURE`` is set
to a non-empty value, in which case the numpy fallback is forced.
"""
import os

from . import _kernels_py

try:  # pragma: no cover - depends on the build
    if os.environ.get("MVLEVY_PURE"):
        raise ImportError("pure backend requested")
    from . import _kernels as _impl
    NAME = "compiled"
except ImportError:
    _impl = _kernels_py
    NAME = "python"

tanh_mean_field = _impl.tanh_mean_field
linear_recursion = _impl.linear_recursion
sup_sq_distance = _impl.sup_sq_distance

__all__ = ["NAME", "tanh_mean_field", "linear_recursion", "sup_sq_distance"]
