"""Small input-checking helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np

from .exceptions import StructuralError


def as_float_array(x, name, ndim=None, shape=None):
    arr = np.array(x, dtype=float, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise StructuralError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise StructuralError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise StructuralError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def check_lambda(lam, allow_zero=True):
    if not isinstance(lam, numbers.Real):
        raise ValueError(f"lambda must be a real number, got {lam!r}")
    lam = float(lam)
    lo_ok = lam >= 0.0 if allow_zero else lam > 0.0
    if not (lo_ok and lam < 1.0):
        bound = "[0, 1)" if allow_zero else "(0, 1)"
        raise ValueError(f"lambda must lie in {bound}, got {lam}")
    return lam


def check_states(states, n, name="states"):
    """Return ``states`` as a 1-d int array of indices in ``range(n)``."""
    arr = np.asarray(states)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise StructuralError(f"{name} must be integer state indices")
        arr = arr.astype(np.int64)
    arr = arr.astype(np.int64, copy=False)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise StructuralError(f"{name} must lie in 0..{n - 1}")
    return arr


def weighted_norm(v, q):
    """The q-weighted Euclidean norm sqrt(sum_x q(x) v(x)^2)."""
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(np.dot(q, v * v)))
