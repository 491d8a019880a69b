"""Low-rank quantization error reconstruction for dense layers."""

from .calibration import (
    CalibAccumulator,
    CalibStats,
    accum_merge,
    accum_update,
    autocorr_diagnostic,
    finalize,
)
from .estimators import ActivationStatistics, LowRankQuantizedLinear
from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    NotPSDError,
    NumericalError,
    QeReconError,
)
from .linalg import (
    SvdResult,
    regularize_spd,
    spsd_inv_sqrt,
    spsd_sqrt,
    svd,
    truncate,
)
from .quantizers import (
    QuantFormat,
    QuantizedTensor,
    QuantSpec,
    dequantize,
    quant_error,
    quantize,
)
from .reconstruct import (
    Method,
    ReconRequest,
    ReconstructedLayer,
    closed_form_objective,
    reconstruct,
    recon_loftq,
    recon_lqer,
    recon_qera_approx,
    recon_qera_exact,
    recon_weight_svd,
    sample_objective,
)

__version__ = "0.1.0"
