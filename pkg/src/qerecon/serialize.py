"""Mapping between in-memory objects and :class:`~qerecon.container.Container`.

Layer entries are namespaced ``layer.<i>.<field>``.
"""

import numpy as np

from .calibration import CalibAccumulator, CalibStats
from .container import Container, ContainerError
from .harness import Nonlinearity, QuantizedModel, SyntheticModel
from .quantizers import QuantFormat, QuantizedTensor, QuantSpec
from .reconstruct import Method, ReconstructedLayer

KIND_MODEL = "model"
KIND_STATS = "calib_stats"
KIND_QUANTIZED = "quantized_model"


def _check_kind(c, kind):
    found = c.meta.get("kind")
    if found != kind:
        raise ContainerError(f"expected a {kind!r} container, found {found!r}")


def model_to_container(model, meta=None):
    c = Container(meta={
        "kind": KIND_MODEL,
        "nonlinearities": [a.value for a in model.nonlinearities],
        "seed": model.seed,
        **(meta or {}),
    })
    for i, w in enumerate(model.weights):
        c.add(f"layer.{i}.weight", w, role="weight")
    return c


def model_from_container(c):
    _check_kind(c, KIND_MODEL)
    acts = c.meta["nonlinearities"]
    weights = tuple(c[f"layer.{i}.weight"] for i in range(len(acts)))
    return SyntheticModel(weights, tuple(Nonlinearity(a) for a in acts), c.meta.get("seed"))


def stats_to_container(stats, accumulators=None, meta=None):
    c = Container(meta={"kind": KIND_STATS, "layers": [], **(meta or {})})
    for i, s in enumerate(stats):
        p = f"layer.{i}."
        c.meta["layers"].append({
            "name": f"layer.{i}", "count": s.count, "eps": s.eps_used, "s_floor": s.s_floor,
        })
        c.add(p + "rxx", s.rxx, role="rxx")
        c.add(p + "rxx_sqrt", s.rxx_sqrt, role="rxx_sqrt")
        c.add(p + "rxx_inv_sqrt", s.rxx_inv_sqrt, role="rxx_inv_sqrt")
        c.add(p + "s_diag", s.s_diag, role="s_diag")
        c.add(p + "lqer_scale", s.lqer_scale, role="lqer_scale")
        if accumulators is not None:
            acc = accumulators[i]
            c.meta["layers"][-1]["acc_count"] = acc.count
            c.add(p + "sum_outer", acc.sum_outer, role="sum_outer")
            c.add(p + "sum_sq", acc.sum_sq, role="sum_sq")
            c.add(p + "sum_abs", acc.sum_abs, role="sum_abs")
    return c


def stats_from_container(c):
    _check_kind(c, KIND_STATS)
    out = []
    for i, info in enumerate(c.meta["layers"]):
        p = f"layer.{i}."
        out.append(CalibStats(
            rxx=c[p + "rxx"], rxx_sqrt=c[p + "rxx_sqrt"], rxx_inv_sqrt=c[p + "rxx_inv_sqrt"],
            s_diag=c[p + "s_diag"], lqer_scale=c[p + "lqer_scale"],
            count=info["count"], eps_used=info["eps"], s_floor=info["s_floor"],
        ))
    return out


def accumulators_from_container(c):
    _check_kind(c, KIND_STATS)
    out = []
    for i, info in enumerate(c.meta["layers"]):
        p = f"layer.{i}."
        if p + "sum_outer" not in c:
            raise ContainerError(f"container holds no accumulator for layer.{i}")
        so = c[p + "sum_outer"]
        out.append(CalibAccumulator(so.shape[0], info["acc_count"], so, c[p + "sum_sq"], c[p + "sum_abs"]))
    return out


def _jsonable(meta):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in meta.items()}


def layers_to_container(qmodel, meta=None):
    c = Container(meta={
        "kind": KIND_QUANTIZED,
        "nonlinearities": [a.value for a in qmodel.nonlinearities],
        "layers": [],
        **(meta or {}),
    })
    for i, layer in enumerate(qmodel.layers):
        p = f"layer.{i}."
        c.meta["layers"].append({
            "name": f"layer.{i}",
            "method": layer.method.value,
            "rank": layer.rank,
            "shape": list(layer.wq.shape),
            "meta": _jsonable(layer.meta),
        })
        c.add(p + "codes", layer.wq.codes, role="codes")
        c.add(p + "scales", layer.wq.scales, role="scales")
        if layer.wq.zero_points is not None:
            c.add(p + "zero_points", layer.wq.zero_points, role="zero_points")
        c.add(p + "a_k", layer.a_k, role="a_k")
        c.add(p + "b_k", layer.b_k, role="b_k")
    return c


def layers_from_container(c):
    _check_kind(c, KIND_QUANTIZED)
    layers = []
    for i, info in enumerate(c.meta["layers"]):
        p = f"layer.{i}."
        spec = QuantSpec.from_dict(info["meta"]["spec"])
        zp = c[p + "zero_points"] if spec.format is QuantFormat.AFFINE_INT else None
        wq = QuantizedTensor(spec, tuple(info["shape"]), c[p + "codes"], c[p + "scales"], zp)
        layers.append(ReconstructedLayer(
            wq, c[p + "a_k"], c[p + "b_k"], info["rank"], Method(info["method"]), dict(info["meta"]),
        ))
    acts = tuple(Nonlinearity(a) for a in c.meta["nonlinearities"])
    return QuantizedModel(tuple(layers), acts)


def load_array(path):
    """Read a 2-D input array from a ``.npy`` file or a container's ``inputs`` entry."""
    if str(path).endswith(".npy"):
        return np.load(path, allow_pickle=False)
    return Container.read(path)["inputs"]
