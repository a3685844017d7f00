"""Hot kernels: compiled Cython core when built, NumPy fallback otherwise.

Set ``MBDA_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

fallback = _fallback

if os.environ.get("MBDA_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

counter_uniforms = _impl.counter_uniforms
project_simplex = _impl.project_simplex
simplex_qp = _impl.simplex_qp

__all__ = ["BACKEND", "counter_uniforms", "project_simplex", "simplex_qp", "fallback"]
