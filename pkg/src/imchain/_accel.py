"""JIT switch for the hot loops.

Kernels decorated with :func:`njit` are compiled by numba when it is
importable and ``IMC_DISABLE_NUMBA`` is unset (or ``0``). Otherwise they stay
plain Python and callers take the vectorised numpy path instead.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_flag = os.environ.get("IMC_DISABLE_NUMBA", "0").strip().lower()
DISABLED = _flag not in ("", "0", "false", "no")
USE_NUMBA = numba is not None and not DISABLED


def njit(*args, **kwargs):
    """``numba.njit(nogil=True)`` or the identity decorator."""
    if not USE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("nogil", True)
    return numba.njit(*args, **kwargs)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
