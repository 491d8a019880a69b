import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qerecon.calibration import (
    CalibAccumulator,
    CalibStats,
    accum_merge,
    accum_update,
    autocorr_diagnostic,
    finalize,
)
from qerecon.exceptions import ConfigurationError


def _acc(x):
    return accum_update(CalibAccumulator.empty(x.shape[1]), x)


def _same(a, b, rtol=1e-12):
    assert a.count == b.count and a.dim == b.dim
    for f in ("sum_outer", "sum_sq", "sum_abs"):
        np.testing.assert_allclose(getattr(a, f), getattr(b, f), rtol=rtol, atol=0)


class TestAccumulate:
    def test_single_sample(self):
        acc = _acc(np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(acc.sum_outer, [[1, 2], [2, 4]])
        np.testing.assert_array_equal(acc.sum_sq, [1, 4])
        np.testing.assert_array_equal(acc.sum_abs, [1, 2])
        assert acc.count == 1

    def test_zero_batch_only_counts(self):
        acc = _acc(np.array([[1.0, -3.0]]))
        acc2 = accum_update(acc, np.zeros((5, 2)))
        assert acc2.count == 6
        np.testing.assert_array_equal(acc2.sum_outer, acc.sum_outer)
        np.testing.assert_array_equal(acc2.sum_abs, acc.sum_abs)

    def test_empty_batch(self):
        acc = accum_update(CalibAccumulator.empty(3), np.zeros((0, 3)))
        assert acc.count == 0 and not acc.sum_outer.any()

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            accum_update(CalibAccumulator.empty(3), np.ones((2, 4)))

    def test_non_finite(self):
        with pytest.raises(ValueError):
            accum_update(CalibAccumulator.empty(2), np.array([[np.nan, 1.0]]))

    def test_float32_widened(self):
        x = np.random.default_rng(0).standard_normal((10, 3)).astype(np.float32)
        acc = _acc(x)
        assert acc.sum_outer.dtype == np.float64
        np.testing.assert_array_equal(acc.sum_outer, x.astype(np.float64).T @ x.astype(np.float64))

    def test_concatenation(self, rng):
        a, b = rng.standard_normal((37, 6)), rng.standard_normal((21, 6))
        _same(accum_update(_acc(a), b), _acc(np.vstack([a, b])))

    def test_diag_matches_sum_sq(self, rng):
        acc = _acc(rng.standard_normal((200, 9)) * 3)
        np.testing.assert_allclose(np.diag(acc.sum_outer), acc.sum_sq, rtol=1e-9)


class TestMerge:
    def test_identity(self, rng):
        a = _acc(rng.standard_normal((10, 4)))
        _same(accum_merge(a, CalibAccumulator.empty(4)), a, rtol=0)

    def test_commutative(self, rng):
        a, b = _acc(rng.standard_normal((10, 4))), _acc(rng.standard_normal((7, 4)))
        _same(accum_merge(a, b), accum_merge(b, a))

    def test_associative(self, rng):
        a, b, c = (_acc(rng.standard_normal((n, 4))) for n in (3, 8, 13))
        _same(accum_merge(accum_merge(a, b), c), accum_merge(a, accum_merge(b, c)), rtol=1e-10)

    def test_sharded(self, rng):
        x = rng.standard_normal((1000, 12)) @ rng.standard_normal((12, 12))
        shards = [_acc(s) for s in np.array_split(x, 4)]
        merged = accum_merge(accum_merge(shards[0], shards[1]), accum_merge(shards[2], shards[3]))
        np.testing.assert_allclose(finalize(merged).rxx, finalize(_acc(x)).rxx, rtol=1e-10)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            accum_merge(CalibAccumulator.empty(2), CalibAccumulator.empty(3))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 30), st.just(5)),
                  elements=st.floats(-100, 100, allow_nan=False)), st.integers(0, 30))
    def test_split_anywhere(self, x, cut):
        cut = min(cut, x.shape[0])
        merged = accum_merge(_acc(x[:cut]), _acc(x[cut:]))
        whole = _acc(x)
        assert merged.count == whole.count
        np.testing.assert_allclose(merged.sum_outer, whole.sum_outer, rtol=1e-10, atol=1e-9)


class TestFinalize:
    def test_identity_basis(self):
        m = 5
        stats = finalize(_acc(np.eye(m)))
        np.testing.assert_allclose(stats.rxx, np.eye(m) / m, rtol=1e-15)
        np.testing.assert_allclose(stats.s_diag, np.full(m, 1 / np.sqrt(m)), rtol=1e-15)
        np.testing.assert_allclose(stats.lqer_scale, np.full(m, 1 / m))

    def test_dead_dimension(self):
        stats = finalize(_acc(np.tile([2.0, 0.0], (4, 1))), s_floor=1e-12)
        np.testing.assert_array_equal(stats.s_diag, [2.0, 1e-12])
        assert stats.lqer_scale[1] == 0.0

    def test_empty_raises(self):
        with pytest.raises(ConfigurationError, match="no calibration data"):
            finalize(CalibAccumulator.empty(3))

    def test_gaussian_concentration(self):
        x = np.random.default_rng(7).standard_normal((100_000, 8))
        stats = finalize(_acc(x))
        assert np.max(np.abs(stats.rxx - np.eye(8))) < 0.05

    def test_roots_and_metadata(self, rng):
        x = rng.standard_normal((300, 10)) @ rng.standard_normal((10, 10))
        stats = finalize(_acc(x), eps=1e-8)
        assert stats.count == 300 and stats.eps_used == 1e-8 and stats.dim == 10
        reg = stats.rxx + 1e-8 * np.trace(stats.rxx) / 10 * np.eye(10)
        np.testing.assert_allclose(stats.rxx_sqrt @ stats.rxx_sqrt, reg, rtol=0,
                                   atol=1e-10 * np.linalg.norm(reg))
        np.testing.assert_allclose(stats.rxx_inv_sqrt @ stats.rxx_sqrt, np.eye(10), atol=1e-8)
        np.testing.assert_array_equal(stats.rxx, stats.rxx.T)
        np.testing.assert_allclose(np.diag(stats.rxx), stats.s_diag ** 2, rtol=1e-9)

    def test_psd(self, rng):
        x = rng.standard_normal((3, 20))  # rank-deficient
        lam = np.linalg.eigvalsh(finalize(_acc(x)).rxx)
        assert lam.min() >= -1e-10 * np.abs(lam).max()


class TestPopulationStats:
    def test_gaussian_magnitude_default(self):
        stats = CalibStats.from_autocorrelation(np.diag([4.0, 1.0]), eps=0.0)
        np.testing.assert_allclose(stats.lqer_scale, np.sqrt(2 / np.pi) * np.array([2.0, 1.0]))
        np.testing.assert_allclose(stats.s_diag, [2.0, 1.0])
        np.testing.assert_allclose(stats.rxx_sqrt, np.diag([2.0, 1.0]))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            CalibStats.from_autocorrelation(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestDiagnostic:
    def test_diagonal(self):
        ratio, _ = autocorr_diagnostic(np.diag([1.0, 2.0, 3.0]))
        assert ratio == 0.0

    def test_all_ones(self):
        ratio, heat = autocorr_diagnostic(np.ones((2, 2)))
        assert ratio == pytest.approx(np.sqrt(2) / 2, abs=1e-12)
        np.testing.assert_allclose(heat, np.full((2, 2), 0.5))

    def test_heatmap_normalized(self, rng):
        x = rng.standard_normal((50, 7)) @ rng.standard_normal((7, 7))
        ratio, heat = autocorr_diagnostic(finalize(_acc(x)))
        assert np.sum(heat ** 2) == pytest.approx(1.0, abs=1e-12)
        assert 0.0 <= ratio < 1.0 and heat.min() >= 0

    def test_zero_matrix(self):
        ratio, heat = autocorr_diagnostic(np.zeros((3, 3)))
        assert ratio == 0.0 and not heat.any()

    def test_iid_large_sample(self):
        x = np.random.default_rng(3).standard_normal((100_000, 16))
        assert autocorr_diagnostic(finalize(_acc(x)))[0] < 0.05
