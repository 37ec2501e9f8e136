"""JIT switch for the hot coordinate loops.

Kernels are written once as plain numpy-on-arrays Python. When numba is
importable and ``BSUMM_DISABLE_NUMBA`` is unset (or ``0``), they are compiled
with ``numba.njit``; otherwise the interpreted versions run unchanged.
"""

import os

_flag = os.environ.get("BSUMM_DISABLE_NUMBA", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    NUMBA_ENABLED = True
except ImportError:
    _njit = None
    NUMBA_ENABLED = False


def jit(fn):
    """Compile ``fn`` with numba if enabled, else return it untouched.

    The compiled dispatcher keeps the original function at ``.py_func``;
    :func:`python_version` gives uniform access to it either way.
    """
    if NUMBA_ENABLED:
        return _njit(cache=True, nogil=True)(fn)
    return fn


def python_version(fn):
    return getattr(fn, "py_func", fn)
