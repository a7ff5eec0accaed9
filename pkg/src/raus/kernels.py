"""Selects the compiled kernels when available, otherwise the numpy fallback.

Set ``RAUS_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _kernels_py as python_backend

compiled_backend = None
if not os.environ.get("RAUS_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

draw_outcomes = _active.draw_outcomes
count_hits = _active.count_hits

__all__ = ["BACKEND", "draw_outcomes", "count_hits", "compiled_backend", "python_backend"]
