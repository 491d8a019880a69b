"""Built-in invariant suite run by ``qerecon selftest``.

Each check runs a small seeded property sweep and raises ``AssertionError``
with a diagnostic on failure. ``corrupt`` deliberately breaks one kernel so
the negative path can be exercised.
"""

import time

import numpy as np

from . import linalg
from .calibration import CalibStats
from .quantizers import QuantSpec, dequantize, quantize
from .reconstruct import (
    Method,
    ReconRequest,
    closed_form_objective,
    reconstruct,
    sample_objective,
)

DOMINANCE_SPEC = QuantSpec("mxint", 3, 32)


def random_spd(rng, m, spread=2.0):
    """Random SPD matrix with log-uniform eigenvalues over ``10**[-spread/2, spread/2]``."""
    q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    lam = 10.0 ** rng.uniform(-spread / 2, spread / 2, size=m)
    out = (q * lam) @ q.T
    return 0.5 * (out + out.T)


def random_instance(rng, lo=8, hi=64, kmax=8):
    m, n = (int(v) for v in rng.integers(lo, hi + 1, size=2))
    k = int(rng.integers(1, min(kmax, m, n) + 1))
    w = rng.standard_normal((m, n)) / np.sqrt(m)
    return w, random_spd(rng, m), k


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def check_eckart_young(rng, trials=5, competitors=1000):
    for _ in range(trials):
        m, n = (int(v) for v in rng.integers(4, 33, size=2))
        k = int(rng.integers(1, min(m, n) + 1))
        a = rng.standard_normal((m, n))
        res = linalg.svd(a)
        best = float(np.linalg.norm(a - linalg.low_rank_approx(a, k)) ** 2)
        tail = float(np.sum(res.sigma[k:] ** 2))
        assert abs(best - tail) <= 1e-8 * max(tail, 1e-12) + 1e-12, "residual != tail energy"
        f = rng.standard_normal((competitors, m, k)) @ rng.standard_normal((competitors, k, n))
        resid = np.sum((a - f) ** 2, axis=(1, 2))
        assert resid.min() >= best * (1 - 1e-12), "random rank-k matrix beat truncated SVD"


def check_sqrt_roundtrip(rng, sizes=(2, 8, 32, 128, 256), sqrt_fn=linalg.spsd_sqrt):
    for m in sizes:
        g = rng.standard_normal((m, m))
        spd = g @ g.T / m + 1e-3 * np.eye(m)
        r = sqrt_fn(spd)
        err = np.linalg.norm(r @ r - spd) / max(np.linalg.norm(spd), 1.0)
        assert err < 1e-10, f"{m}x{m}: |R R - M| / |M| = {err:.3g}"
        assert np.array_equal(r, r.T), f"{m}x{m}: root not symmetric"


def check_quantizer_idempotence(rng, n_blocks=100_000):
    specs = [QuantSpec("mxint", b, bs) for b in (2, 3, 4, 8) for bs in (16, 32, 64)]
    per = max(1, n_blocks // len(specs))
    for spec in specs:
        rows = max(1, per // 8)
        w = rng.standard_normal((rows, 8 * spec.block_size)) * 10.0 ** rng.uniform(-3, 3, (rows, 1))
        q1 = quantize(w, spec)
        q2 = quantize(dequantize(q1), spec)
        assert q1 == q2, f"q(dq(q(W))) != q(W) for {spec}"


def check_average_bits():
    expect = {(4, 32): 4.25, (3, 32): 3.25, (2, 16): 2.50}
    for (bits, bs), v in expect.items():
        got = QuantSpec("mxint", bits, bs).average_bits
        assert got == v, f"MXINT({bits},{bs}) average bits {got} != {v}"


def _population_stats(rxx):
    return CalibStats.from_autocorrelation(rxx, eps=0.0)


def check_dominance_and_tail(rng, instances=100):
    """QERA-exact beats every method that keeps ``W~ = q(W)``; tail identity holds.

    LoftQ with more than one round re-quantizes ``W - A B`` and so optimizes
    over a different ``W~``; those comparisons are counted, not asserted.
    """
    loftq_wins = 0
    for i in range(instances):
        w, rxx, k = random_instance(rng)
        stats = _population_stats(rxx)
        base = ReconRequest(w, DOMINANCE_SPEC, k, stats)
        exact = reconstruct(Method.QERA_EXACT, base)
        f_exact = closed_form_objective(exact, w, rxx)
        zero_obj = float(np.sum((stats.rxx_sqrt @ (w - exact.w_tilde)) ** 2))
        tol = 1e-9 * zero_obj
        shared = [reconstruct(m, base) for m in (Method.WEIGHT_SVD, Method.LQER, Method.QERA_APPROX)]
        shared.append(reconstruct(Method.LOFTQ, ReconRequest(w, DOMINANCE_SPEC, k, stats, 1)))
        for layer in shared:
            f = closed_form_objective(layer, w, rxx)
            assert f_exact <= f + tol, (
                f"instance {i}: qera-exact {f_exact:.6g} > {layer.method.value} {f:.6g}"
            )
        for t in range(2, 6):
            layer = reconstruct(Method.LOFTQ, ReconRequest(w, DOMINANCE_SPEC, k, stats, t))
            if closed_form_objective(layer, w, rxx) + tol < f_exact:
                loftq_wins += 1
                break
        sigma = linalg.svd(stats.rxx_sqrt @ (w - exact.w_tilde)).sigma
        tail = float(np.sum(sigma[k:] ** 2))
        assert abs(f_exact - tail) <= 1e-9 * max(tail, zero_obj * 1e-6), (
            f"instance {i}: objective {f_exact!r} != tail energy {tail!r}"
        )
    return f"loftq(T>=2, re-quantized W~) lower on {loftq_wins}/{instances} instances"


def check_objective_equivalence(rng, instances=50):
    for i in range(instances):
        w, _, k = random_instance(rng)
        m = w.shape[0]
        mix = rng.standard_normal((m, m))
        x = rng.standard_normal((int(rng.integers(m, 4 * m)), m)) @ mix + rng.standard_normal(m)
        layer = reconstruct(Method.WEIGHT_SVD, ReconRequest(w, DOMINANCE_SPEC, k))
        rxx = x.T @ x / x.shape[0]
        a = sample_objective(layer, w, x)
        b = closed_form_objective(layer, w, rxx)
        assert _rel(b, a) < 1e-9, f"instance {i}: sample {a!r} vs closed form {b!r}"


def check_reduction_chain(rng, instances=10):
    for i in range(instances):
        w, _, k = random_instance(rng)
        m = w.shape[0]
        ident = _population_stats(np.eye(m))
        diag = _population_stats(np.diag(10.0 ** rng.uniform(-1, 1, m)))
        iso = _population_stats(np.eye(m) * rng.uniform(0.1, 10.0) ** 2)

        def ck(method, stats):
            return reconstruct(method, ReconRequest(w, DOMINANCE_SPEC, k, stats)).correction

        svd_c = ck(Method.WEIGHT_SVD, None)
        scale = max(np.linalg.norm(svd_c), 1e-300)
        d = np.linalg.norm(ck(Method.QERA_EXACT, ident) - svd_c) / scale
        assert d < 1e-9, f"instance {i}: rxx=I exact vs weight-svd differ by {d:.3g}"
        ca = ck(Method.QERA_APPROX, diag)
        d = np.linalg.norm(ck(Method.QERA_EXACT, diag) - ca) / max(np.linalg.norm(ca), 1e-300)
        assert d < 1e-8, f"instance {i}: diagonal rxx exact vs approx differ by {d:.3g}"
        d = np.linalg.norm(ck(Method.QERA_APPROX, iso) - svd_c) / scale
        assert d < 1e-10, f"instance {i}: constant scale approx vs weight-svd differ by {d:.3g}"


def _corrupted_sqrt(m, eig_clamp=linalg.DEFAULT_EIG_CLAMP):
    return linalg.spsd_sqrt(m, eig_clamp) * (1.0 + 1e-6)


def suite(corrupt=None):
    """Ordered ``(name, callable)`` pairs; each callable takes a Generator."""
    sqrt_fn = _corrupted_sqrt if corrupt == "spsd_sqrt" else linalg.spsd_sqrt
    return [
        ("eckart-young", check_eckart_young),
        ("spsd_sqrt round-trip", lambda rng: check_sqrt_roundtrip(rng, sqrt_fn=sqrt_fn)),
        ("quantizer idempotence", check_quantizer_idempotence),
        ("average bits", lambda rng: check_average_bits()),
        ("output-error optimality + tail energy", check_dominance_and_tail),
        ("objective equivalence", check_objective_equivalence),
        ("reduction chain", check_reduction_chain),
    ]


def run(seed=0, corrupt=None, echo=print):
    """Run every check; return the list of ``(name, passed, detail, seconds)``."""
    results = []
    for idx, (name, fn) in enumerate(suite(corrupt)):
        rng = np.random.default_rng([seed, idx])
        t0 = time.perf_counter()
        try:
            detail = fn(rng) or ""
            ok = True
        except AssertionError as exc:
            ok, detail = False, str(exc)
        dt = time.perf_counter() - t0
        results.append((name, ok, detail, dt))
        if echo is not None:
            status = "PASS" if ok else "FAIL"
            echo(f"[{status}] {name} ({dt:.2f}s){' - ' + detail if detail else ''}")
    return results
