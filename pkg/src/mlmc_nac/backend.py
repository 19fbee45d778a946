"""Backend selection: compiled numba kernels or the pure-numpy path.

Set ``MLMC_NAC_BACKEND=numpy`` to force the numpy path; the default is numba
whenever it can be imported.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

ENV_VAR = "MLMC_NAC_BACKEND"
NUMBA_AVAILABLE = numba is not None


def njit(fn):
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def current_backend() -> str:
    choice = os.environ.get(ENV_VAR, "numba").strip().lower()
    if choice not in ("numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and not NUMBA_AVAILABLE:
        return "numpy"
    return choice


def resolve(backend=None) -> str:
    if backend is None:
        return current_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend
