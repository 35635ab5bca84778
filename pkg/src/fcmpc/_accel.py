"""Numba dispatch layer.

Hot numerical kernels in this package come in two flavors: a loop-oriented
version compiled with numba.njit and a vectorized NumPy twin. Setting the
environment variable FCMPC_NO_NUMBA to a non-empty value other than "0"
forces the pure-NumPy path; the same fallback engages automatically when
numba is not importable. `benchmarks/bench_kernels.py` times both paths
side by side.
"""

import os

__all__ = ["NUMBA_ENABLED", "njit", "maybe_jit"]


def _numba_requested() -> bool:
    flag = os.environ.get("FCMPC_NO_NUMBA", "").strip()
    return flag in ("", "0")


NUMBA_ENABLED = False
if _numba_requested():
    try:
        from numba import njit  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        """No-op stand-in for numba.njit when the JIT path is disabled."""
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


def maybe_jit(func, **jit_kwargs):
    """Return a jitted copy of `func` when numba is active, else `func`."""
    if NUMBA_ENABLED:
        from numba import njit as _njit

        return _njit(**jit_kwargs)(func)
    return func
