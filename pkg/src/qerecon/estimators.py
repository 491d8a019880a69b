"""scikit-learn compatible wrappers.

:class:`ActivationStatistics` is the streaming calibration engine behind the
``fit``/``partial_fit`` protocol. :class:`LowRankQuantizedLinear` wraps one
dense layer ``y = x @ weight``: ``fit`` calibrates on layer inputs and
computes the quantized weight and low-rank correction, ``transform`` applies
the reconstructed layer, and ``score`` is the negated mean squared output
error against the full-precision layer.
"""

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import calibration as calib
from . import linalg
from ._validation import as_matrix
from .quantizers import QuantSpec
from .reconstruct import Method, ReconRequest, reconstruct, sample_objective


class ActivationStatistics(BaseEstimator):
    """Accumulate input statistics for error reconstruction.

    Parameters
    ----------
    eps : float
        Relative diagonal perturbation applied before taking matrix roots.
    s_floor : float
        Lower bound on the per-dimension RMS scale.

    Attributes
    ----------
    accumulator_ : CalibAccumulator
    stats_ : CalibStats
    offdiag_ratio_ : float
        Off-diagonal Frobenius share of the autocorrelation matrix.
    """

    def __init__(self, eps=linalg.DEFAULT_EPS, s_floor=calib.DEFAULT_S_FLOOR):
        self.eps = eps
        self.s_floor = s_floor

    def partial_fit(self, X, y=None):
        X = as_matrix(X, "X")
        if not hasattr(self, "accumulator_"):
            self.accumulator_ = calib.CalibAccumulator.empty(X.shape[1])
            self.n_features_in_ = X.shape[1]
        self.accumulator_ = calib.accum_update(self.accumulator_, X)
        self._refresh()
        return self

    def fit(self, X, y=None):
        for attr in ("accumulator_", "stats_", "offdiag_ratio_", "n_features_in_"):
            self.__dict__.pop(attr, None)
        return self.partial_fit(X)

    def _refresh(self):
        self.stats_ = calib.finalize(self.accumulator_, self.eps, self.s_floor)
        self.offdiag_ratio_, _ = calib.autocorr_diagnostic(self.stats_)

    @property
    def rxx_(self):
        check_is_fitted(self, "stats_")
        return self.stats_.rxx


class LowRankQuantizedLinear(TransformerMixin, BaseEstimator):
    """Quantized dense layer with a low-rank high-precision correction.

    Parameters
    ----------
    weight : array-like of shape (n_features_in, n_features_out)
    method : {"weight-svd", "loftq", "lqer", "qera-approx", "qera-exact"}
    rank : int
    bits, block_size, format :
        Quantization scheme, see :class:`~qerecon.quantizers.QuantSpec`.
    iterations : int
        LoftQ rounds; ignored by the other methods.
    eps, s_floor : float
        Calibration regularization, see :class:`ActivationStatistics`.
    """

    def __init__(self, weight=None, method="qera-exact", rank=8, bits=4, block_size=32,
                 format="mxint", iterations=5, eps=linalg.DEFAULT_EPS,
                 s_floor=calib.DEFAULT_S_FLOOR):
        self.weight = weight
        self.method = method
        self.rank = rank
        self.bits = bits
        self.block_size = block_size
        self.format = format
        self.iterations = iterations
        self.eps = eps
        self.s_floor = s_floor

    def fit(self, X=None, y=None):
        """Calibrate on layer inputs ``X`` and build the reconstructed layer.

        ``X`` may be omitted for methods that do not use activation statistics.
        """
        if self.weight is None:
            raise ValueError("weight must be set before fit")
        w = as_matrix(self.weight, "weight")
        method = Method(self.method)
        stats = None
        if X is not None:
            X = as_matrix(X, "X")
            if X.shape[1] != w.shape[0]:
                raise ValueError(f"X has {X.shape[1]} features, weight expects {w.shape[0]}")
            self.statistics_ = ActivationStatistics(self.eps, self.s_floor).fit(X)
            stats = self.statistics_.stats_
        spec = QuantSpec(self.format, self.bits, self.block_size)
        req = ReconRequest(w, spec, self.rank, stats, self.iterations)
        self.layer_ = reconstruct(method, req)
        self.n_features_in_ = w.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "layer_")
        X = as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, layer expects {self.n_features_in_}")
        return self.layer_.forward(X)

    def score(self, X, y=None):
        check_is_fitted(self, "layer_")
        return -sample_objective(self.layer_, self.weight, X)

    @property
    def quantized_weight_(self):
        check_is_fitted(self, "layer_")
        return self.layer_.wq

    @property
    def a_(self):
        check_is_fitted(self, "layer_")
        return self.layer_.a_k

    @property
    def b_(self):
        check_is_fitted(self, "layer_")
        return self.layer_.b_k

    @property
    def effective_weight_(self):
        check_is_fitted(self, "layer_")
        return self.layer_.effective_weight

    @property
    def average_bits(self):
        return QuantSpec(self.format, self.bits, self.block_size).average_bits
