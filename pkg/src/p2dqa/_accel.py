"""Backend selection for the numeric kernels.

The per-point neighbourhood kernels exist twice: a numba ``@njit`` version and
a vectorised numpy version.  ``P2DQA_BACKEND=numpy`` (or ``P2DQA_DISABLE_NUMBA=1``)
forces the numpy path; otherwise numba is used when it imports.
"""

import os
import threading

# TBB shipped with some distros is too old for numba; skip it.
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False

_BACKENDS = ("numba", "numpy")


def _initial_backend():
    if os.environ.get("P2DQA_DISABLE_NUMBA", "").lower() in ("1", "true", "yes"):
        return "numpy"
    requested = os.environ.get("P2DQA_BACKEND", "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested not in ("", "numba"):
        raise ValueError(f"P2DQA_BACKEND must be one of {_BACKENDS}, got {requested!r}")
    return "numba" if HAS_NUMBA else "numpy"


_backend = _initial_backend()

# The workqueue layer aborts on concurrent parallel launches from several
# Python threads, so numba kernels are entered one at a time.
launch_lock = threading.Lock()


def get_backend():
    return _backend


def set_backend(name):
    """Switch kernels at runtime; returns the previous backend name."""
    global _backend
    if name not in _BACKENDS:
        raise ValueError(f"backend must be one of {_BACKENDS}, got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    previous, _backend = _backend, name
    return previous


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


if HAS_NUMBA:
    prange = numba.prange
else:  # pragma: no cover
    prange = range
