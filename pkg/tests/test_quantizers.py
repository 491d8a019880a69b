import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qerecon.quantizers import QuantFormat, QuantSpec, dequantize, quant_error, quantize


def mxint_reference(row_block, bits):
    """Element-by-element MXINT codec for one block, written with the stdlib only."""
    amax = max(abs(v) for v in row_block)
    e = 0 if amax == 0 else math.floor(math.log2(amax))
    e = min(max(e, -126), 127)
    step = 2.0 ** (e - (bits - 2))
    top = 2 ** (bits - 1) - 1
    codes = [min(max(round(v / step), -top), top) for v in row_block]
    if not any(codes):
        e, step = 0, 2.0 ** (-(bits - 2))
    return codes, e, [c * step for c in codes]


class TestSpec:
    @pytest.mark.parametrize("bits,bs,avg", [(4, 32, 4.25), (3, 32, 3.25), (2, 16, 2.50), (8, 64, 8.125)])
    def test_average_bits(self, bits, bs, avg):
        assert QuantSpec("mxint", bits, bs).average_bits == avg

    @pytest.mark.parametrize("bits,bs", [(1, 32), (9, 32), (4, 8), (4, 33)])
    def test_mxint_rejects(self, bits, bs):
        with pytest.raises(ValueError):
            QuantSpec("mxint", bits, bs)

    def test_affine_any_block(self):
        assert QuantSpec("affine-int", 4, 7).format is QuantFormat.AFFINE_INT

    def test_dict_roundtrip(self):
        spec = QuantSpec("affine-int", 5, 12)
        assert QuantSpec.from_dict(spec.to_dict()) == spec


class TestMxint:
    def test_zero_matrix(self):
        t = quantize(np.zeros((2, 32)), QuantSpec("mxint", 4, 32))
        assert not t.codes.any()
        np.testing.assert_array_equal(dequantize(t), np.zeros((2, 32)))

    def test_worked_block(self):
        row = np.zeros((1, 32))
        row[0, :4] = [1.0, 0.5, -0.5, 0.25]
        t = quantize(row, QuantSpec("mxint", 4, 32))
        assert t.scales[0, 0] == 0
        # 1.0 / 0.25 = 4 sits inside the 4-bit code range, so the block is exact
        np.testing.assert_array_equal(t.codes[0, :4], [4, 2, -2, 1])
        np.testing.assert_array_equal(dequantize(t)[0, :4], [1.0, 0.5, -0.5, 0.25])
        codes, e, dq = mxint_reference(list(row[0]), 4)
        assert e == 0 and codes[:4] == [4, 2, -2, 1] and dq[:4] == [1.0, 0.5, -0.5, 0.25]

    @pytest.mark.parametrize("bits,bs", [(2, 16), (3, 32), (4, 32), (8, 64)])
    def test_matches_scalar_reference(self, rng, bits, bs):
        w = rng.standard_normal((5, 3 * bs + 7)) * 10.0 ** rng.uniform(-4, 4, (5, 1))
        t = quantize(w, QuantSpec("mxint", bits, bs))
        dq = dequantize(t)
        for r in range(w.shape[0]):
            for b0 in range(0, w.shape[1], bs):
                codes, e, vals = mxint_reference(list(w[r, b0:b0 + bs]), bits)
                assert list(t.codes[r, b0:b0 + bs]) == codes
                assert t.scales[r, b0 // bs] == e
                assert list(dq[r, b0:b0 + bs]) == vals

    def test_round_half_to_even(self):
        # step = 0.25 for e = 0, bits = 4: 0.375 / 0.25 = 1.5 -> 2, 0.625 / 0.25 = 2.5 -> 2
        row = np.zeros((1, 16))
        row[0, :3] = [1.0, 0.375, 0.625]
        t = quantize(row, QuantSpec("mxint", 4, 16))
        np.testing.assert_array_equal(t.codes[0, :3], [4, 2, 2])

    def test_block_count_partial(self, rng):
        t = quantize(rng.standard_normal((3, 40)), QuantSpec("mxint", 4, 16))
        assert t.scales.shape == (3, 3) and t.n_blocks == 3 and t.codes.shape == (3, 40)

    def test_code_range(self, rng):
        for bits in range(2, 9):
            t = quantize(rng.standard_normal((8, 64)) * 100, QuantSpec("mxint", bits, 32))
            assert t.codes.min() >= -(2 ** (bits - 1)) and t.codes.max() <= 2 ** (bits - 1) - 1

    def test_error_bound(self, rng):
        w = rng.standard_normal((4, 64))
        spec = QuantSpec("mxint", 8, 32)
        t = quantize(w, spec)
        err = np.abs(w - dequantize(t)).reshape(4, 2, 32)
        step = np.ldexp(1.0, t.scales.astype(int) - 6)
        assert np.all(err <= step[..., None] / 2)

    @settings(max_examples=200, deadline=None)
    @given(
        arrays(np.float64, (3, 48), elements=st.floats(-1e6, 1e6, allow_nan=False)),
        st.sampled_from([(2, 16), (3, 32), (4, 16), (8, 64)]),
    )
    def test_idempotent(self, w, cfg):
        spec = QuantSpec("mxint", *cfg)
        t = quantize(w, spec)
        assert quantize(dequantize(t), spec) == t

    def test_deterministic(self, rng):
        w = rng.standard_normal((16, 64))
        spec = QuantSpec("mxint", 3, 32)
        a, b = quantize(w, spec), quantize(w.copy(), spec)
        assert a == b and a.codes.tobytes() == b.codes.tobytes()

    def test_tiny_block_exponent_clamped(self):
        row = np.full((1, 16), 1e-300)
        t = quantize(row, QuantSpec("mxint", 4, 16))
        assert t.scales[0, 0] == 0 and not t.codes.any()


class TestAffine:
    def test_dequant_formula(self, rng):
        w = rng.standard_normal((3, 20))
        t = quantize(w, QuantSpec("affine-int", 4, 8))
        assert t.codes.min() >= 0 and t.codes.max() <= 15
        blk = t.codes[:, :8].astype(float)
        np.testing.assert_allclose(
            dequantize(t)[:, :8], (blk - t.zero_points[:, :1]) * t.scales[:, :1]
        )

    def test_error_bound(self, rng):
        w = rng.standard_normal((4, 32))
        t = quantize(w, QuantSpec("affine-int", 6, 32))
        assert np.all(np.abs(w - dequantize(t)) <= t.scales[:, :1] * 0.5 + 1e-12)

    def test_constant_block_scale_one(self):
        t = quantize(np.full((1, 4), 2.0), QuantSpec("affine-int", 4, 4))
        assert t.scales[0, 0] == 1.0
        np.testing.assert_array_equal(dequantize(t), np.full((1, 4), 2.0))

    def test_idempotent_codes(self, rng):
        spec = QuantSpec("affine-int", 4, 32)
        for _ in range(20):
            w = rng.standard_normal((8, 96))
            t1 = quantize(w, spec)
            t2 = quantize(dequantize(t1), spec)
            np.testing.assert_array_equal(t1.codes, t2.codes)
            np.testing.assert_array_equal(t1.zero_points, t2.zero_points)
            np.testing.assert_allclose(t1.scales, t2.scales, rtol=1e-12)


class TestQuantError:
    def test_representable(self):
        w = np.zeros((2, 32))
        w[:, :3] = [0.5, -0.25, 0.75]
        np.testing.assert_array_equal(quant_error(w, QuantSpec("mxint", 4, 32)), 0.0)

    def test_zero(self):
        np.testing.assert_array_equal(quant_error(np.zeros((3, 16)), QuantSpec("mxint", 2, 16)), 0.0)

    def test_coarser_is_worse(self, rng):
        w = rng.standard_normal((32, 64))
        e2 = np.linalg.norm(quant_error(w, QuantSpec("mxint", 2, 16)))
        e8 = np.linalg.norm(quant_error(w, QuantSpec("mxint", 8, 16)))
        assert e2 > e8

    def test_monotone_in_bits(self, rng):
        w = rng.standard_normal((32, 64))
        errs = [np.linalg.norm(quant_error(w, QuantSpec("mxint", b, 32))) for b in range(2, 9)]
        assert all(a > b for a, b in zip(errs, errs[1:]))
