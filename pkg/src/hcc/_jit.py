"""Numba switch.

Set ``HCC_DISABLE_JIT=1`` to run every kernel as plain Python and make the
object-level numpy path the default backend.
"""
import os

JIT_ENABLED = os.environ.get("HCC_DISABLE_JIT", "0").lower() not in ("1", "true", "yes")

try:
    import numba as nb
except ImportError:  # pragma: no cover
    JIT_ENABLED = False


def njit(*args, **kwargs):
    if JIT_ENABLED:
        return nb.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func


def resolve_backend(backend, jittable):
    """Map a requested backend ('auto', 'jit', 'numpy') onto the one actually used."""
    if backend not in ("auto", "jit", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numpy":
        return "numpy"
    if backend == "jit":
        if not jittable:
            raise ValueError("game contains components without a compiled kernel")
        return "jit"
    return "jit" if (JIT_ENABLED and jittable) else "numpy"
