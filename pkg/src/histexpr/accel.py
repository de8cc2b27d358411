"""Numba acceleration toggle for the hot numeric kernels.

Every hot kernel in :mod:`histexpr._kernels` ships in two builds: a numba
``@njit`` build and a pure-numpy fallback. The lane is chosen once at import
time from the ``HISTEXPR_NUMBA`` environment variable:

* ``HISTEXPR_NUMBA=0``: force the pure-numpy fallback.
* ``HISTEXPR_NUMBA=1``: require numba; raise if it cannot be imported.
* unset or ``auto``: use numba when it imports cleanly, numpy otherwise.

Within one lane all kernels are deterministic; reruns of any pipeline stage
with the same seed and the same lane produce byte-identical outputs.
``benchmarks/backend_bench.py`` times the two lanes against each other.
"""

import os

_FLAG = os.environ.get("HISTEXPR_NUMBA", "auto").strip().lower()


def _probe_numba():
    try:
        import numba
    except ImportError:
        return None
    return numba


if _FLAG in ("0", "off", "false", "no"):
    _numba = None
elif _FLAG in ("1", "on", "true", "yes"):
    _numba = _probe_numba()
    if _numba is None:
        raise ImportError("HISTEXPR_NUMBA=1 but numba is not importable")
else:
    _numba = _probe_numba()

NUMBA_ENABLED = _numba is not None
BACKEND = "numba" if NUMBA_ENABLED else "numpy"


def njit(func):
    """``numba.njit(cache=True)`` in the numba lane, identity otherwise."""
    if _numba is None:
        return func
    return _numba.njit(cache=True)(func)
