"""Desk-scale synthetic models and experiment sweeps.

A :class:`SyntheticModel` is a stack of dense layers ``x -> act(x @ W)``.
The sweeps quantize every layer with each reconstruction method and report
per-layer objectives, weight errors and the end-to-end output error against
the full-precision model.
"""

import csv
import enum
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import calibration as calib
from . import linalg
from ._validation import as_matrix, check_symmetric
from .quantizers import QuantSpec
from .reconstruct import Method, ReconRequest, closed_form_objective, reconstruct

CALIB_STREAM = 0
EVAL_STREAM = 1
_CHUNK = 1024


class Nonlinearity(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    NONE = "none"

    def __call__(self, x):
        if self is Nonlinearity.RELU:
            return np.maximum(x, 0.0)
        if self is Nonlinearity.TANH:
            return np.tanh(x)
        return x


@dataclass(frozen=True, eq=False)
class SyntheticModel:
    weights: tuple
    nonlinearities: tuple
    seed: int = None

    def __post_init__(self):
        if len(self.weights) < 1 or len(self.weights) != len(self.nonlinearities):
            raise ValueError("model needs >= 1 layer and one nonlinearity per layer")
        for i, (w0, w1) in enumerate(zip(self.weights, self.weights[1:])):
            if w0.shape[1] != w1.shape[0]:
                raise ValueError(
                    f"layer {i} outputs {w0.shape[1]} features but layer {i + 1} expects {w1.shape[0]}"
                )

    @property
    def depth(self):
        return len(self.weights)

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[1]

    @property
    def layer_names(self):
        return [f"layer.{i}" for i in range(self.depth)]

    def layer_inputs(self, x):
        """Yield the input to every layer for a batch ``x``."""
        h = x
        for w, act in zip(self.weights, self.nonlinearities):
            yield h
            h = act(h @ w)

    def forward(self, x):
        h = as_matrix(x, "model input", allow_empty=True)
        for w, act in zip(self.weights, self.nonlinearities):
            h = act(h @ w)
        return h


@dataclass(frozen=True, eq=False)
class QuantizedModel:
    layers: tuple
    nonlinearities: tuple

    @property
    def depth(self):
        return len(self.layers)

    def forward(self, x):
        h = as_matrix(x, "model input", allow_empty=True)
        for layer, act in zip(self.layers, self.nonlinearities):
            h = act(layer.forward(h))
        return h


def build_model(dims, nonlinearity="relu", seed=0, final_nonlinearity="none"):
    """Seeded Gaussian MLP with weights scaled by ``1/sqrt(fan_in)``.

    ``dims`` lists the feature sizes ``[d_0, d_1, ..., d_L]``. Hidden layers use
    ``nonlinearity``; the last layer uses ``final_nonlinearity`` (linear
    logits by default).
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"dims must list >= 2 positive sizes, got {dims}")
    rng = np.random.default_rng(seed)
    weights = tuple(
        rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)
        for d_in, d_out in zip(dims, dims[1:])
    )
    acts = [Nonlinearity(nonlinearity)] * (len(weights) - 1) + [Nonlinearity(final_nonlinearity)]
    return SyntheticModel(weights, tuple(acts), seed)


def equicorrelated_cov(dim, offdiag_ratio):
    """Unit-diagonal covariance whose off-diagonal Frobenius share is ``offdiag_ratio``."""
    if not 0.0 <= offdiag_ratio < 1.0:
        raise ValueError("offdiag_ratio must be in [0, 1)")
    if dim == 1:
        return np.eye(1)
    r2 = offdiag_ratio**2
    rho = np.sqrt(r2 / ((1.0 - r2) * (dim - 1)))
    return (1.0 - rho) * np.eye(dim) + rho * np.ones((dim, dim))


class InputKind(str, enum.Enum):
    IID_GAUSSIAN = "iid_gaussian"
    CORRELATED_GAUSSIAN = "correlated_gaussian"
    LOADED = "loaded"


@dataclass(frozen=True, eq=False)
class InputDistribution:
    """Source of model inputs.

    Gaussian kinds draw from independent seed streams (calibration and
    evaluation never share samples). Draws are prefix-consistent: the first
    ``n`` rows of ``sample(2n)`` equal ``sample(n)``. ``LOADED`` serves rows
    of a fixed array, calibration from the front and evaluation from the back.
    """

    kind: InputKind
    dim: int
    seed: int = 0
    cov: np.ndarray = None
    data: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "kind", InputKind(self.kind))
        if self.kind is InputKind.CORRELATED_GAUSSIAN:
            cov = check_symmetric(self.cov, "cov")
            if cov.shape[0] != self.dim:
                raise ValueError("cov shape does not match dim")
            linalg.spsd_sqrt(cov)
            object.__setattr__(self, "cov", cov)
        if self.kind is InputKind.LOADED:
            data = as_matrix(self.data, "loaded inputs")
            if data.shape[1] != self.dim:
                raise ValueError("loaded inputs do not match dim")
            object.__setattr__(self, "data", data)

    @classmethod
    def iid(cls, dim, seed=0):
        return cls(InputKind.IID_GAUSSIAN, dim, seed)

    @classmethod
    def correlated(cls, cov, seed=0):
        cov = np.asarray(cov, dtype=np.float64)
        return cls(InputKind.CORRELATED_GAUSSIAN, cov.shape[0], seed, cov=cov)

    @classmethod
    def loaded(cls, data):
        data = as_matrix(data, "loaded inputs")
        return cls(InputKind.LOADED, data.shape[1], data=data)

    def _factor(self):
        # PSD-robust factor with factor @ factor.T == cov
        lam, vecs = np.linalg.eigh(self.cov)
        return vecs * np.sqrt(np.clip(lam, 0.0, None))

    def iter_batches(self, n, stream=CALIB_STREAM, chunk=_CHUNK):
        if n < 0:
            raise ValueError("n must be non-negative")
        if self.kind is InputKind.LOADED:
            if n > self.data.shape[0]:
                raise ValueError(f"requested {n} samples, file holds {self.data.shape[0]}")
            src = self.data if stream == CALIB_STREAM else self.data[::-1]
            for start in range(0, n, chunk):
                yield src[start:min(n, start + chunk)]
            return
        rng = np.random.default_rng([self.seed, stream])
        factor = self._factor() if self.kind is InputKind.CORRELATED_GAUSSIAN else None
        for start in range(0, n, chunk):
            z = rng.standard_normal((min(chunk, n - start), self.dim))
            yield z if factor is None else z @ factor.T

    def sample(self, n, stream=CALIB_STREAM):
        parts = list(self.iter_batches(n, stream))
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, self.dim))


def calibrate_accumulators(model, dist, n_samples, checkpoints=()):
    """Stream ``n_samples`` calibration inputs through the FP model.

    Returns the per-layer accumulators; when ``checkpoints`` (sample counts)
    are given, also returns a dict of snapshots taken when each count is hit.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if dist.dim != model.input_dim:
        raise ValueError(f"input distribution has dim {dist.dim}, model expects {model.input_dim}")
    accs = [calib.CalibAccumulator.empty(w.shape[0]) for w in model.weights]
    marks = sorted({int(c) for c in checkpoints if 0 < c <= n_samples})
    snapshots = {}
    # chunk boundaries aligned with every checkpoint
    bounds = sorted(set(marks) | {n_samples})
    done = 0
    batches = dist.iter_batches(n_samples, CALIB_STREAM)
    pending = np.zeros((0, dist.dim))
    for stop in bounds:
        while pending.shape[0] < stop - done:
            pending = np.concatenate([pending, next(batches)], axis=0)
        x, pending = pending[: stop - done], pending[stop - done:]
        for i, h in enumerate(model.layer_inputs(x)):
            accs[i] = calib.accum_update(accs[i], h)
        done = stop
        if stop in marks:
            snapshots[stop] = list(accs)
    return (accs, snapshots) if checkpoints else accs


def calibrate_model(model, dist, n_samples, eps=linalg.DEFAULT_EPS, s_floor=calib.DEFAULT_S_FLOOR):
    """Per-layer :class:`CalibStats` from full-precision activations."""
    accs = calibrate_accumulators(model, dist, n_samples)
    return [calib.finalize(a, eps, s_floor) for a in accs]


def quantize_model(model, method, spec, rank, stats=None, iterations=1):
    """Replace every layer with its :class:`ReconstructedLayer`."""
    method = Method(method)
    if stats is None:
        stats = [None] * model.depth
    if len(stats) != model.depth:
        raise ValueError(f"got stats for {len(stats)} layers, model has {model.depth}")
    layers = tuple(
        reconstruct(method, ReconRequest(w, spec, rank, s, iterations))
        for w, s in zip(model.weights, stats)
    )
    return QuantizedModel(layers, model.nonlinearities)


def model_output_error(fp_model, q_model, eval_inputs):
    """Mean over inputs of ``||y_q - y_fp||^2`` at the final output."""
    if fp_model.depth != q_model.depth:
        raise ValueError("models have different depths")
    for w, layer in zip(fp_model.weights, q_model.layers):
        if tuple(w.shape) != tuple(layer.wq.shape):
            raise ValueError("models have different layer shapes")
    x = as_matrix(eval_inputs, "eval inputs")
    d = q_model.forward(x) - fp_model.forward(x)
    return float(np.einsum("ij,ij->", d, d) / x.shape[0])


class SweepAxis(str, enum.Enum):
    RANK = "rank"
    LOFTQ_ITERS = "loftq_iters"
    CALIB_SIZE = "calib_size"


DEFAULT_VALUES = {
    SweepAxis.RANK: (4, 8, 16, 32),
    SweepAxis.LOFTQ_ITERS: (1, 2, 3, 4, 5),
    SweepAxis.CALIB_SIZE: tuple(32 * 2**i for i in range(8)),
}
DEFAULT_METHODS = {
    SweepAxis.RANK: tuple(Method),
    SweepAxis.LOFTQ_ITERS: (Method.LOFTQ,),
    SweepAxis.CALIB_SIZE: (Method.LQER, Method.QERA_APPROX, Method.QERA_EXACT),
}


@dataclass
class SweepConfig:
    axis: SweepAxis = SweepAxis.RANK
    values: tuple = None
    methods: tuple = None
    dims: tuple = (64, 64, 64, 64, 64)
    nonlinearity: str = "relu"
    model_seed: int = 0
    input_seed: int = 1
    input_offdiag: float = 0.0
    spec: QuantSpec = field(default_factory=lambda: QuantSpec("mxint", 3, 32))
    rank: int = 8
    iterations: int = 5
    n_calib: int = 1024
    n_eval: int = 128
    eps: float = linalg.DEFAULT_EPS
    s_floor: float = calib.DEFAULT_S_FLOOR

    def __post_init__(self):
        self.axis = SweepAxis(self.axis)
        self.values = tuple(int(v) for v in (self.values or DEFAULT_VALUES[self.axis]))
        self.methods = tuple(Method(m) for m in (self.methods or DEFAULT_METHODS[self.axis]))
        self.dims = tuple(int(d) for d in self.dims)
        if not self.values:
            raise ValueError("sweep needs at least one value")

    def to_dict(self):
        return {
            "axis": self.axis.value,
            "values": list(self.values),
            "methods": [m.value for m in self.methods],
            "dims": list(self.dims),
            "nonlinearity": self.nonlinearity,
            "model_seed": self.model_seed,
            "input_seed": self.input_seed,
            "input_offdiag": self.input_offdiag,
            "quant": self.spec.to_dict(),
            "rank": self.rank,
            "iterations": self.iterations,
            "n_calib": self.n_calib,
            "n_eval": self.n_eval,
            "eps": self.eps,
            "s_floor": self.s_floor,
        }

    def input_distribution(self):
        d = self.dims[0]
        if self.input_offdiag:
            return InputDistribution.correlated(equicorrelated_cov(d, self.input_offdiag), self.input_seed)
        return InputDistribution.iid(d, self.input_seed)


@dataclass
class SweepPoint:
    setting: int
    method: Method
    model_output_error: float
    layer_objective: list
    weight_error: list

    def to_dict(self):
        return {
            "setting": self.setting,
            "method": self.method.value,
            "model_output_error": self.model_output_error,
            "layer_objective": list(self.layer_objective),
            "weight_error": list(self.weight_error),
        }


@dataclass
class SweepReport:
    axis: SweepAxis
    points: list
    config: dict

    def column(self, method, metric):
        """``[(setting, value), ...]`` for one method, sorted by setting."""
        method = Method(method)
        return [(p.setting, getattr(p, metric)) for p in self.points if p.method is method]

    def to_json(self):
        doc = {
            "axis": self.axis.value,
            "config": self.config,
            "points": [p.to_dict() for p in self.points],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def to_csv(self):
        depth = len(self.points[0].layer_objective) if self.points else 0
        header = ["axis", "setting", "method", "model_output_error",
                  "layer_objective_total", "weight_error_total"]
        header += [f"layer_objective.{i}" for i in range(depth)]
        header += [f"weight_error.{i}" for i in range(depth)]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for p in self.points:
            writer.writerow(
                [self.axis.value, p.setting, p.method.value, repr(p.model_output_error),
                 repr(sum(p.layer_objective)), repr(sum(p.weight_error))]
                + [repr(v) for v in p.layer_objective]
                + [repr(v) for v in p.weight_error]
            )
        return buf.getvalue()


class SweepCellError(RuntimeError):
    def __init__(self, axis, setting, method, cause):
        self.cell = (axis.value, setting, method.value)
        super().__init__(f"sweep cell {axis.value}={setting} method={method.value} failed: {cause}")


def _threads():
    try:
        return max(1, int(os.environ.get("QERA_THREADS", "1")))
    except ValueError:
        return 1


def run_sweep(cfg):
    """Run every ``(setting, method)`` cell of ``cfg`` and collect a report.

    Layer objectives are closed-form output errors under the calibration
    autocorrelation each method was given; the model output error is measured
    on a held-out evaluation set drawn from a separate seed stream.
    """
    model = build_model(cfg.dims, cfg.nonlinearity, cfg.model_seed)
    dist = cfg.input_distribution()
    x_eval = dist.sample(cfg.n_eval, EVAL_STREAM)

    if cfg.axis is SweepAxis.CALIB_SIZE:
        _, snaps = calibrate_accumulators(model, dist, max(cfg.values), checkpoints=cfg.values)
        stats_for = {
            n: [calib.finalize(a, cfg.eps, cfg.s_floor) for a in snaps[n]] for n in cfg.values
        }
    else:
        base = calibrate_model(model, dist, cfg.n_calib, cfg.eps, cfg.s_floor)
        stats_for = {v: base for v in cfg.values}

    def cell(setting, method):
        rank, iters = cfg.rank, cfg.iterations
        if cfg.axis is SweepAxis.RANK:
            rank = setting
        elif cfg.axis is SweepAxis.LOFTQ_ITERS:
            iters = setting
        stats = stats_for[setting]
        try:
            qm = quantize_model(model, method, cfg.spec, rank, stats, iters)
            err = model_output_error(model, qm, x_eval)
        except Exception as exc:
            raise SweepCellError(cfg.axis, setting, method, exc) from exc
        return SweepPoint(
            setting=setting,
            method=method,
            model_output_error=err,
            layer_objective=[
                closed_form_objective(layer, w, s.rxx)
                for layer, w, s in zip(qm.layers, model.weights, stats)
            ],
            weight_error=[layer.meta["weight_errors"][-1] for layer in qm.layers],
        )

    jobs = [(v, m) for v in cfg.values for m in cfg.methods]
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        points = list(pool.map(lambda job: cell(*job), jobs))
    order = {m: i for i, m in enumerate(cfg.methods)}
    points.sort(key=lambda p: (p.setting, order[p.method]))
    return SweepReport(cfg.axis, points, cfg.to_dict())
