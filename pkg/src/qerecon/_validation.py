"""Input validation helpers shared by the functional core and the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

_SYM_TOL = 1e-9


def as_matrix(x, name="matrix", *, allow_empty=False):
    """Return ``x`` as a finite, C-contiguous 2-D float64 array.

    32-bit inputs are widened here so every downstream computation runs in
    double precision.
    """
    try:
        return check_array(
            x,
            dtype=np.float64,
            order="C",
            ensure_all_finite=True,
            ensure_min_samples=0 if allow_empty else 1,
            ensure_min_features=0 if allow_empty else 1,
            input_name=name,
        )
    except ValueError as exc:
        raise ValueError(f"{name}: {exc}") from None


def as_vector(x, name="vector"):
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name}: expected a 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return v


def check_square(m, name="matrix"):
    m = as_matrix(m, name)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name}: expected a square matrix, got shape {m.shape}")
    return m


def check_symmetric(m, name="matrix", tol=_SYM_TOL):
    m = check_square(m, name)
    scale = max(1.0, float(np.max(np.abs(m))))
    asym = float(np.max(np.abs(m - m.T)))
    if asym > tol * scale:
        raise ValueError(f"{name}: not symmetric (max |m - m^T| = {asym:.3g})")
    return m


def check_rank(k, upper, name="rank"):
    if isinstance(k, bool) or int(k) != k:
        raise ValueError(f"{name} must be an integer, got {k!r}")
    k = int(k)
    if not 1 <= k <= upper:
        raise ValueError(f"{name} must satisfy 1 <= {name} <= {upper}, got {k}")
    return k
