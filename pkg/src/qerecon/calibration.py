"""Streaming activation statistics for calibration.

A :class:`CalibAccumulator` holds plain sums, so shards can be accumulated
independently and merged. :func:`finalize` turns the sums into the
quantities the reconstruction methods consume: the autocorrelation matrix
``E[x^T x]`` with its SPSD square root and inverse root, the per-dimension
root mean square, and the per-dimension mean magnitude.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from ._validation import as_matrix, as_vector, check_symmetric
from .exceptions import ConfigurationError

DEFAULT_S_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class CalibAccumulator:
    """Mergeable sums over row-vector samples of dimension ``dim``."""

    dim: int
    count: int
    sum_outer: np.ndarray
    sum_sq: np.ndarray
    sum_abs: np.ndarray

    @classmethod
    def empty(cls, dim):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        return cls(
            dim=int(dim),
            count=0,
            sum_outer=np.zeros((dim, dim)),
            sum_sq=np.zeros(dim),
            sum_abs=np.zeros(dim),
        )


@dataclass(frozen=True, eq=False)
class CalibStats:
    rxx: np.ndarray
    rxx_sqrt: np.ndarray
    rxx_inv_sqrt: np.ndarray
    s_diag: np.ndarray
    lqer_scale: np.ndarray
    count: int
    eps_used: float
    s_floor: float = DEFAULT_S_FLOOR

    @property
    def dim(self):
        return self.rxx.shape[0]

    @classmethod
    def from_autocorrelation(
        cls, rxx, *, lqer_scale=None, eps=linalg.DEFAULT_EPS, s_floor=DEFAULT_S_FLOOR, count=0
    ):
        """Build stats directly from a known (population) autocorrelation matrix.

        Without an explicit ``lqer_scale`` the zero-mean Gaussian relation
        ``E|x_i| = sqrt(2/pi) * sqrt(E[x_i^2])`` is used.
        """
        rxx = check_symmetric(rxx, "rxx")
        rxx = 0.5 * (rxx + rxx.T)
        rms = np.sqrt(np.clip(np.diag(rxx), 0.0, None))
        if lqer_scale is None:
            lqer_scale = np.sqrt(2.0 / np.pi) * rms
        lqer_scale = as_vector(lqer_scale, "lqer_scale")
        if lqer_scale.shape != rms.shape:
            raise ValueError("lqer_scale length does not match rxx")
        root, inv_root = linalg.spsd_sqrt_pair(rxx, eps)
        return cls(
            rxx=rxx,
            rxx_sqrt=root,
            rxx_inv_sqrt=inv_root,
            s_diag=np.maximum(rms, s_floor),
            lqer_scale=lqer_scale,
            count=int(count),
            eps_used=float(eps),
            s_floor=float(s_floor),
        )


def accum_update(acc, batch):
    """Add a batch of row-vector samples (``N_b x dim``) to the accumulator."""
    batch = as_matrix(batch, "calibration batch", allow_empty=True)
    if batch.ndim != 2 or batch.shape[1] != acc.dim:
        raise ValueError(
            f"calibration batch has {batch.shape[1]} columns, accumulator expects {acc.dim}"
        )
    return CalibAccumulator(
        dim=acc.dim,
        count=acc.count + batch.shape[0],
        sum_outer=acc.sum_outer + batch.T @ batch,
        sum_sq=acc.sum_sq + np.einsum("ij,ij->j", batch, batch),
        sum_abs=acc.sum_abs + np.abs(batch).sum(axis=0),
    )


def accum_merge(a, b):
    if a.dim != b.dim:
        raise ValueError(f"cannot merge accumulators of dim {a.dim} and {b.dim}")
    return CalibAccumulator(
        dim=a.dim,
        count=a.count + b.count,
        sum_outer=a.sum_outer + b.sum_outer,
        sum_sq=a.sum_sq + b.sum_sq,
        sum_abs=a.sum_abs + b.sum_abs,
    )


def finalize(acc, eps=linalg.DEFAULT_EPS, s_floor=DEFAULT_S_FLOOR):
    """Convert accumulated sums into :class:`CalibStats`.

    ``rxx`` is the plain sample mean of outer products; its square root and
    inverse root are taken after adding the ``eps`` diagonal perturbation.
    Dimensions that never fire get ``s_diag = s_floor`` instead of zero.
    """
    if acc.count == 0:
        raise ConfigurationError("no calibration data: accumulator is empty")
    n = acc.count
    rxx = 0.5 * (acc.sum_outer + acc.sum_outer.T) / n
    root, inv_root = linalg.spsd_sqrt_pair(rxx, eps)
    return CalibStats(
        rxx=rxx,
        rxx_sqrt=root,
        rxx_inv_sqrt=inv_root,
        s_diag=np.maximum(np.sqrt(acc.sum_sq / n), s_floor),
        lqer_scale=acc.sum_abs / n,
        count=n,
        eps_used=float(eps),
        s_floor=float(s_floor),
    )


def autocorr_diagnostic(stats):
    """Measure how far inputs are from having uncorrelated dimensions.

    Returns ``(offdiag_ratio, heatmap)`` where ``heatmap = |rxx| / ||rxx||_F``
    and ``offdiag_ratio`` is the Frobenius mass of the off-diagonal part
    relative to the whole matrix (0 means perfectly uncorrelated).
    """
    rxx = stats.rxx if isinstance(stats, CalibStats) else as_matrix(stats, "rxx")
    total = float(np.linalg.norm(rxx))
    if total == 0.0:
        return 0.0, np.zeros_like(rxx)
    off = rxx - np.diag(np.diag(rxx))
    return float(np.linalg.norm(off)) / total, np.abs(rxx) / total
