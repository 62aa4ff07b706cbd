"""Input validation helpers shared by the solvers and estimators."""

import numbers

import numpy as np

SIMPLEX_RENORM_TOL = 1e-6


def check_simplex(x, name="q", tol=SIMPLEX_RENORM_TOL):
    """Return ``x`` as a float array on the probability simplex.

    Small round-off in the total (at most ``tol``) is renormalized away;
    anything larger, negative entries, or non-finite values raise
    ``ValueError``.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries: {arr[arr < 0]}")
    total = arr.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"{name} sums to {total!r}, not 1 (tolerance {tol})")
    # leave rounding-level totals alone so repeated validation is idempotent
    if abs(total - 1.0) <= 1e-15:
        return arr
    return arr / total


def check_budget(N, name="N", minimum=1):
    if isinstance(N, bool) or not isinstance(N, numbers.Integral):
        if isinstance(N, float) and N.is_integer():
            N = int(N)
        else:
            raise TypeError(f"{name} must be an integer, got {N!r}")
    N = int(N)
    if N < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {N}")
    return N


def check_positive(value, name, strict=True):
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return value


def check_same_length(a, b, name_a, name_b):
    if len(a) != len(b):
        raise ValueError(f"{name_a} has length {len(a)} but {name_b} has length {len(b)}")


def check_probability(x, name, open_interval=False):
    x = float(x)
    if open_interval:
        if not 0.0 < x < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {x}")
    elif not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")
    return x
