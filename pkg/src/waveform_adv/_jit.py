"""
Numba switch.

Set ``WAVEFORM_ADV_JIT=0`` to run every kernel through its pure-numpy
implementation instead (useful for debugging and for the benchmark).
"""

import os

_FLAG = os.environ.get("WAVEFORM_ADV_JIT", "1").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

JIT_ENABLED = _numba is not None and _FLAG not in ("0", "false", "no", "off")

if _numba is not None:
    njit = _numba.njit
else:  # pragma: no cover

    def njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrapper(f):
            return f

        return wrapper
