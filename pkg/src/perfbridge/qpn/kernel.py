"""Selects the station kernel: compiled when available, pure Python otherwise.

Set ``PERFBRIDGE_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernel_py

if os.environ.get("PERFBRIDGE_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernel as _compiled
    except ImportError:  # extension not built
        _compiled = None

if _compiled is not None:
    run_stations = _compiled.run_stations
    BACKEND = "cython"
else:
    run_stations = _kernel_py.run_stations
    BACKEND = "python"

run_stations_py = _kernel_py.run_stations
run_stations_compiled = _compiled.run_stations if _compiled is not None else None

__all__ = ["BACKEND", "run_stations", "run_stations_compiled", "run_stations_py"]
