"""Dense linear-algebra kernels: SVD, truncation, SPSD square roots.

Everything here is a pure function of its inputs and runs in float64.
LAPACK (through numpy) does the heavy lifting; this module adds the
contracts the reconstruction code relies on (descending spectra, explicit
symmetrization, PSD checks with a relative tolerance).
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix, check_rank, check_symmetric
from .exceptions import ConvergenceError, NotPSDError, NumericalError

DEFAULT_EPS = 1e-8
DEFAULT_EIG_CLAMP = 1e-8


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``m = u @ diag(sigma) @ vt`` with ``sigma`` non-increasing."""

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self):
        return (self.u * self.sigma) @ self.vt


def svd(m):
    """Thin singular value decomposition of a finite matrix.

    Returns ``r = min(rows, cols)`` singular triplets in descending order.
    """
    m = as_matrix(m, "svd input")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        rows, cols = m.shape
        raise ConvergenceError(
            f"SVD did not converge for {rows}x{cols} matrix"
        ) from exc
    return SvdResult(u=u, sigma=s, vt=vt)


def truncate(res, k):
    """Keep the top ``k`` singular triplets of ``res``.

    Ties at the cut are broken by decomposition order, so only the product
    ``u_k @ diag(sigma_k) @ vt_k`` is uniquely determined.
    """
    k = check_rank(k, len(res.sigma))
    return res.u[:, :k].copy(), res.sigma[:k].copy(), res.vt[:k, :].copy()


def low_rank_approx(m, k):
    """Best rank-``k`` approximation of ``m`` in Frobenius norm."""
    u, s, vt = truncate(svd(m), k)
    return (u * s) @ vt


def regularize_spd(m, eps=DEFAULT_EPS):
    """Return ``m + lam * I`` with ``lam = eps * trace(m) / n`` (``eps`` if trace is 0)."""
    m = check_symmetric(m, "regularize_spd input")
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    n = m.shape[0]
    tr = float(np.trace(m))
    lam = eps * tr / n if tr != 0.0 else float(eps)
    out = m.copy()
    out[np.diag_indices(n)] += lam
    return out


def _eigh_psd(m, eig_clamp):
    m = 0.5 * (m + m.T)
    try:
        lam, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(
            f"symmetric eigensolver did not converge for {m.shape[0]}x{m.shape[1]} matrix"
        ) from exc
    threshold = eig_clamp * float(np.linalg.norm(m))
    if lam.size and lam[0] < -threshold:
        raise NotPSDError(lam[0], threshold)
    return np.clip(lam, 0.0, None), vecs


def _from_eig(vecs, values):
    out = (vecs * values) @ vecs.T
    return 0.5 * (out + out.T)


def spsd_sqrt(m, eig_clamp=DEFAULT_EIG_CLAMP):
    """Unique symmetric PSD square root via eigendecomposition.

    Negative eigenvalues with magnitude up to ``eig_clamp * ||m||_F`` are
    treated as rounding noise and clamped to zero; anything more negative
    raises :class:`NotPSDError`.
    """
    m = check_symmetric(m, "spsd_sqrt input")
    lam, vecs = _eigh_psd(m, eig_clamp)
    return _from_eig(vecs, np.sqrt(lam))


def spsd_inv_sqrt(m, eps=DEFAULT_EPS, eig_clamp=DEFAULT_EIG_CLAMP):
    """Inverse of the SPSD square root of ``regularize_spd(m, eps)``."""
    reg = regularize_spd(m, eps)
    lam, vecs = _eigh_psd(reg, eig_clamp)
    if lam.size and lam[0] <= 0.0:
        raise NumericalError(
            f"matrix is singular (smallest eigenvalue {lam[0]:.3g}); use eps > 0"
        )
    return _from_eig(vecs, 1.0 / np.sqrt(lam))


def spsd_sqrt_pair(m, eps=DEFAULT_EPS, eig_clamp=DEFAULT_EIG_CLAMP):
    """``(sqrt, inv_sqrt)`` of ``regularize_spd(m, eps)`` from one eigendecomposition."""
    reg = regularize_spd(m, eps)
    lam, vecs = _eigh_psd(reg, eig_clamp)
    if lam.size and lam[0] <= 0.0:
        raise NumericalError(
            f"matrix is singular (smallest eigenvalue {lam[0]:.3g}); use eps > 0"
        )
    root = np.sqrt(lam)
    return _from_eig(vecs, root), _from_eig(vecs, 1.0 / root)
