"""Optional numba acceleration: `njit` degrades to a no-op decorator without numba."""


def _noop_jit(f=None, *args, **kwargs):
    if callable(f):
        return f
    return lambda g: g


def _have_numba() -> bool:
    try:
        import numba  # noqa: F401

        return True
    except ImportError:
        return False


HAVE_NUMBA = _have_numba()

if HAVE_NUMBA:
    from numba import njit
else:
    njit = _noop_jit
