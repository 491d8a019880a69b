"""Block quantization codecs producing ``W~ = dq(q(W))``.

Two formats are supported, both blocked along the last axis (each row is cut
into ``ceil(cols / block_size)`` blocks):

``MXINT``
    One 8-bit shared exponent per block plus a signed ``bits``-bit mantissa
    per element. With ``e = floor(log2(max|w|))`` the element step is
    ``2**(e - (bits - 2))``, so the block maximum lands in the top binade of
    the mantissa range.

``AFFINE_INT``
    Classic asymmetric integer quantization with a per-block float scale and
    zero point.

Rounding is round-half-to-even everywhere (``np.rint``).
"""

import enum
from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix

MX_EXP_MIN = -126
MX_EXP_MAX = 127
MX_BLOCK_SIZES = (16, 32, 64)


class QuantFormat(str, enum.Enum):
    MXINT = "mxint"
    AFFINE_INT = "affine-int"


@dataclass(frozen=True)
class QuantSpec:
    """Quantization scheme: format, element bit width and block size."""

    format: QuantFormat = QuantFormat.MXINT
    bits: int = 4
    block_size: int = 32

    def __post_init__(self):
        object.__setattr__(self, "format", QuantFormat(self.format))
        if isinstance(self.bits, bool) or int(self.bits) != self.bits:
            raise ValueError(f"bits must be an integer, got {self.bits!r}")
        if isinstance(self.block_size, bool) or int(self.block_size) != self.block_size:
            raise ValueError(f"block_size must be an integer, got {self.block_size!r}")
        object.__setattr__(self, "bits", int(self.bits))
        object.__setattr__(self, "block_size", int(self.block_size))
        if self.format is QuantFormat.MXINT:
            if not 2 <= self.bits <= 8:
                raise ValueError(f"MXINT bits must be in [2, 8], got {self.bits}")
            if self.block_size not in MX_BLOCK_SIZES:
                raise ValueError(
                    f"MXINT block_size must be one of {MX_BLOCK_SIZES}, got {self.block_size}"
                )
        else:
            if not 2 <= self.bits <= 16:
                raise ValueError(f"AFFINE_INT bits must be in [2, 16], got {self.bits}")
            if self.block_size < 1:
                raise ValueError(f"block_size must be >= 1, got {self.block_size}")

    @property
    def average_bits(self):
        """Storage cost per weight including the amortised block metadata.

        MXINT carries an 8-bit exponent per block; AFFINE_INT is costed with a
        16-bit scale and a 16-bit zero point per block.
        """
        meta = 8 if self.format is QuantFormat.MXINT else 32
        return self.bits + meta / self.block_size

    def to_dict(self):
        return {"format": self.format.value, "bits": self.bits, "block_size": self.block_size}

    @classmethod
    def from_dict(cls, d):
        return cls(format=d["format"], bits=d["bits"], block_size=d["block_size"])


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Integer codes plus per-block metadata.

    ``scales`` holds the shared exponents (int8, shape ``(rows, n_blocks)``) for
    MXINT and the float scales for AFFINE_INT; ``zero_points`` is only set for
    AFFINE_INT.
    """

    spec: QuantSpec
    shape: tuple
    codes: np.ndarray
    scales: np.ndarray
    zero_points: np.ndarray = None

    @property
    def n_blocks(self):
        return -(-self.shape[1] // self.spec.block_size)

    def __eq__(self, other):
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        same_zp = (self.zero_points is None and other.zero_points is None) or (
            self.zero_points is not None
            and other.zero_points is not None
            and np.array_equal(self.zero_points, other.zero_points)
        )
        return (
            self.spec == other.spec
            and tuple(self.shape) == tuple(other.shape)
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.scales, other.scales)
            and same_zp
        )

    __hash__ = None


def _blocked(w, block_size, fill):
    rows, cols = w.shape
    n_blocks = -(-cols // block_size)
    pad = n_blocks * block_size - cols
    if pad:
        w = np.concatenate([w, np.full((rows, pad), fill)], axis=1)
    return w.reshape(rows, n_blocks, block_size)


def _unblocked(blocks, cols):
    rows = blocks.shape[0]
    return blocks.reshape(rows, -1)[:, :cols]


def _mx_step(exponents, bits):
    return np.ldexp(1.0, exponents.astype(np.int64) - (bits - 2))


def _quantize_mxint(w, spec):
    bits, bs = spec.bits, spec.block_size
    blocks = _blocked(w, bs, 0.0)
    amax = np.max(np.abs(blocks), axis=-1)
    # frexp gives amax = f * 2**ex with f in [0.5, 1), hence floor(log2) = ex - 1
    _, ex = np.frexp(amax)
    exps = np.where(amax > 0, ex - 1, 0)
    exps = np.clip(exps, MX_EXP_MIN, MX_EXP_MAX)
    step = _mx_step(exps, bits)[..., None]
    top = 2 ** (bits - 1) - 1
    # symmetric code range keeps max |dq| inside the block's binade
    codes = np.clip(np.rint(blocks / step), -top, top).astype(np.int8)
    exps = np.where(np.any(codes != 0, axis=-1), exps, 0).astype(np.int8)
    return QuantizedTensor(
        spec=spec,
        shape=w.shape,
        codes=_unblocked(codes, w.shape[1]).copy(),
        scales=exps,
    )


def _quantize_affine(w, spec):
    bits, bs = spec.bits, spec.block_size
    blocks = _blocked(w, bs, np.nan)
    lo = np.nanmin(blocks, axis=-1)
    hi = np.nanmax(blocks, axis=-1)
    levels = 2**bits - 1
    scale = (hi - lo) / levels
    scale = np.where(scale > 0, scale, 1.0)
    zp = np.rint(-lo / scale)
    raw = np.rint(blocks / scale[..., None]) + zp[..., None]
    codes = np.clip(np.nan_to_num(raw), 0, levels).astype(np.int32)
    return QuantizedTensor(
        spec=spec,
        shape=w.shape,
        codes=_unblocked(codes, w.shape[1]).copy(),
        scales=scale,
        zero_points=zp,
    )


def quantize(w, spec):
    """Quantize a weight matrix blockwise along its last axis."""
    w = as_matrix(w, "weight")
    if spec.format is QuantFormat.MXINT:
        return _quantize_mxint(w, spec)
    return _quantize_affine(w, spec)


def dequantize(t):
    """Materialize a :class:`QuantizedTensor` back to float64."""
    rows, cols = t.shape
    bs = t.spec.block_size
    codes = _blocked(t.codes.astype(np.float64), bs, 0.0)
    if t.spec.format is QuantFormat.MXINT:
        out = codes * _mx_step(t.scales, t.spec.bits)[..., None]
    else:
        out = (codes - t.zero_points[..., None]) * t.scales[..., None]
    return _unblocked(out, cols).copy()


def quant_error(w, spec):
    """Weight quantization error ``w - dq(q(w))``."""
    w = as_matrix(w, "weight")
    return w - dequantize(quantize(w, spec))
