"""Low-rank quantization error reconstruction.

Every method quantizes ``W`` to ``W~`` and returns factors ``A`` (m x k) and
``B`` (k x n) so that the layer ``x @ W`` is approximated by
``x @ (W~ + A @ B)``. They differ in what error the correction targets:

=============  ==============================================================
weight-svd     best rank-k fit to ``W - W~`` in Frobenius norm
loftq          alternates re-quantizing ``W - A B`` with the weight-svd step
lqer           SVD of the error scaled by mean activation magnitude
qera-approx    SVD of the error scaled by per-dimension RMS activation;
               optimal output error when input dimensions are uncorrelated
qera-exact     SVD of the error scaled by ``R^{1/2}``, ``R = E[x^T x]``;
               optimal expected output error in general
=============  ==============================================================
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from ._validation import as_matrix, check_rank, check_symmetric
from .calibration import CalibStats
from .exceptions import ConfigurationError
from .quantizers import QuantizedTensor, QuantSpec, dequantize, quantize


class Method(str, enum.Enum):
    WEIGHT_SVD = "weight-svd"
    LOFTQ = "loftq"
    LQER = "lqer"
    QERA_APPROX = "qera-approx"
    QERA_EXACT = "qera-exact"

    @property
    def needs_stats(self):
        return self in (Method.LQER, Method.QERA_APPROX, Method.QERA_EXACT)


@dataclass(frozen=True, eq=False)
class ReconRequest:
    w: np.ndarray
    spec: QuantSpec
    rank: int
    stats: CalibStats = None
    iterations: int = 1

    def __post_init__(self):
        w = as_matrix(self.w, "weight")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "rank", check_rank(self.rank, min(w.shape)))
        if self.stats is not None and self.stats.dim != w.shape[0]:
            raise ValueError(
                f"calibration stats have dim {self.stats.dim}, weight has {w.shape[0]} input features"
            )


@dataclass(frozen=True, eq=False)
class ReconstructedLayer:
    """Quantized weight plus the rank-k correction ``a_k @ b_k``."""

    wq: QuantizedTensor
    a_k: np.ndarray
    b_k: np.ndarray
    rank: int
    method: Method
    meta: dict = field(default_factory=dict)

    @property
    def w_tilde(self):
        return dequantize(self.wq)

    @property
    def correction(self):
        return self.a_k @ self.b_k

    @property
    def effective_weight(self):
        return self.w_tilde + self.correction

    def forward(self, x):
        x = as_matrix(x, "layer input", allow_empty=True)
        return x @ self.w_tilde + (x @ self.a_k) @ self.b_k


def _meta(req, **extra):
    meta = {"spec": req.spec.to_dict(), "iterations": 1}
    if req.stats is not None:
        meta["eps"] = req.stats.eps_used
        meta["calib_count"] = req.stats.count
    meta.update(extra)
    return meta


def _require_stats(req, method):
    if req.stats is None:
        raise ConfigurationError(f"method {method.value!r} requires calibration stats")
    return req.stats


def _weight_error(w, w_tilde, a, b):
    return float(np.linalg.norm(w - w_tilde - a @ b))


def _split_sqrt(err, k):
    u, s, vt = linalg.truncate(linalg.svd(err), k)
    root = np.sqrt(s)
    return u * root, root[:, None] * vt


def recon_weight_svd(req):
    """Rank-k truncated SVD of the plain weight error."""
    wq = quantize(req.w, req.spec)
    w_tilde = dequantize(wq)
    a, b = _split_sqrt(req.w - w_tilde, req.rank)
    err = _weight_error(req.w, w_tilde, a, b)
    return ReconstructedLayer(
        wq, a, b, req.rank, Method.WEIGHT_SVD, _meta(req, weight_errors=[err])
    )


def recon_loftq(req):
    """LoftQ alternating quantization/SVD for ``req.iterations`` rounds.

    ``meta["weight_errors"]`` records ``||W - W~ - A B||_F`` after each round.
    """
    T = req.iterations
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise ValueError(f"iterations must be a positive integer, got {T!r}")
    m, n = req.w.shape
    a = np.zeros((m, req.rank))
    b = np.zeros((req.rank, n))
    history = []
    for _ in range(int(T)):
        wq = quantize(req.w - a @ b, req.spec)
        w_tilde = dequantize(wq)
        a, b = _split_sqrt(req.w - w_tilde, req.rank)
        history.append(_weight_error(req.w, w_tilde, a, b))
    return ReconstructedLayer(
        wq, a, b, req.rank, Method.LOFTQ, _meta(req, iterations=int(T), weight_errors=history)
    )


def _diag_scaled(req, scale, method):
    wq = quantize(req.w, req.spec)
    w_tilde = dequantize(wq)
    u, s, vt = linalg.truncate(linalg.svd(scale[:, None] * (req.w - w_tilde)), req.rank)
    a = u / scale[:, None]
    b = s[:, None] * vt
    return ReconstructedLayer(
        wq, a, b, req.rank, method,
        _meta(req, weight_errors=[_weight_error(req.w, w_tilde, a, b)]),
    )


def recon_lqer(req):
    """LQER: scale the error rows by mean activation magnitude ``E|x_i|``."""
    stats = _require_stats(req, Method.LQER)
    scale = np.maximum(stats.lqer_scale, stats.s_floor)
    return _diag_scaled(req, scale, Method.LQER)


def recon_qera_approx(req):
    """Output-error optimum under uncorrelated input dimensions.

    Scales by ``S = diag(sqrt(E[x_i^2]))``.
    """
    stats = _require_stats(req, Method.QERA_APPROX)
    return _diag_scaled(req, stats.s_diag, Method.QERA_APPROX)


def recon_qera_exact(req):
    """Output-error optimum for an arbitrary input autocorrelation.

    Takes the truncated SVD of ``R^{1/2} (W - W~)`` and maps the left factor
    back with ``R^{-1/2}``.
    """
    stats = _require_stats(req, Method.QERA_EXACT)
    wq = quantize(req.w, req.spec)
    w_tilde = dequantize(wq)
    u, s, vt = linalg.truncate(linalg.svd(stats.rxx_sqrt @ (req.w - w_tilde)), req.rank)
    a = stats.rxx_inv_sqrt @ u
    b = s[:, None] * vt
    return ReconstructedLayer(
        wq, a, b, req.rank, Method.QERA_EXACT,
        _meta(req, weight_errors=[_weight_error(req.w, w_tilde, a, b)]),
    )


_DISPATCH = {
    Method.WEIGHT_SVD: recon_weight_svd,
    Method.LOFTQ: recon_loftq,
    Method.LQER: recon_lqer,
    Method.QERA_APPROX: recon_qera_approx,
    Method.QERA_EXACT: recon_qera_exact,
}


def reconstruct(method, req):
    """Run ``method`` (a :class:`Method` or its string name) on ``req``."""
    method = Method(method)
    if method.needs_stats:
        _require_stats(req, method)
    return _DISPATCH[method](req)


def _residual(layer, w):
    w = as_matrix(w, "weight")
    if w.shape != tuple(layer.wq.shape):
        raise ValueError(f"weight shape {w.shape} does not match layer {tuple(layer.wq.shape)}")
    return layer.effective_weight - w


def sample_objective(layer, w, eval_inputs):
    """Mean squared output error ``mean_x ||x (W~ + A B) - x W||^2`` over rows."""
    p = _residual(layer, w)
    x = as_matrix(eval_inputs, "eval inputs", allow_empty=True)
    if x.shape[1] != p.shape[0]:
        raise ValueError(f"eval inputs have {x.shape[1]} features, layer expects {p.shape[0]}")
    if x.shape[0] == 0:
        raise ValueError("eval inputs are empty")
    y = x @ p
    return float(np.einsum("ij,ij->", y, y) / x.shape[0])


def closed_form_objective(layer, w, rxx):
    """Expected output error ``tr(R P P^T) = ||R^{1/2} P||_F^2`` with ``P = W~ + A B - W``."""
    p = _residual(layer, w)
    rxx = check_symmetric(rxx, "rxx")
    if rxx.shape[0] != p.shape[0]:
        raise ValueError(f"rxx is {rxx.shape[0]}x{rxx.shape[0]}, layer expects {p.shape[0]}")
    q = linalg.spsd_sqrt(rxx) @ p
    return float(np.einsum("ij,ij->", q, q))
