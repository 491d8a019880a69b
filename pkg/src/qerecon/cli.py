"""Command-line interface.

Subcommands::

    qerecon calibrate  --config CFG --out stats.qera [--model-out model.qera]
    qerecon quantize   --config CFG --stats stats.qera --out q.qera
    qerecon eval       --model model.qera --quantized q.qera [--config CFG]
    qerecon sweep      --config CFG --out PREFIX        # PREFIX.csv + PREFIX.json
    qerecon selftest

Flags override values from the JSON run config. Exit codes: 0 success,
1 usage/configuration error, 2 numerical failure, 3 I/O error.
"""

import argparse
import json
import sys

import jsonschema
import numpy as np

from . import calibration as calib
from . import harness, linalg, selftest
from .container import Container
from .exceptions import ConfigurationError, NumericalError
from .quantizers import QuantSpec
from .reconstruct import Method, closed_form_objective, sample_objective
from .serialize import (
    layers_from_container,
    layers_to_container,
    load_array,
    model_from_container,
    model_to_container,
    stats_from_container,
    stats_to_container,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

_METHODS = [m.value for m in Method]

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2},
                "nonlinearity": {"enum": [n.value for n in harness.Nonlinearity]},
                "seed": {"type": "integer"},
                "weights": {"type": "string"},
            },
        },
        "inputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": [k.value for k in harness.InputKind]},
                "seed": {"type": "integer"},
                "offdiag": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "cov": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "path": {"type": "string"},
            },
        },
        "calibration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_samples": {"type": "integer", "minimum": 1},
                "eps": {"type": "number", "minimum": 0},
                "s_floor": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "quant": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "format": {"enum": ["mxint", "affine-int"]},
                "bits": {"type": "integer"},
                "block_size": {"type": "integer"},
            },
        },
        "method": {"enum": _METHODS},
        "rank": {"type": "integer", "minimum": 1},
        "iterations": {"type": "integer", "minimum": 1},
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_samples": {"type": "integer", "minimum": 1}},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "axis": {"enum": [a.value for a in harness.SweepAxis]},
                "values": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "methods": {"type": "array", "items": {"enum": _METHODS}},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "stats": {"type": "string"},
                "model": {"type": "string"},
                "quantized": {"type": "string"},
                "report": {"type": "string"},
            },
        },
    },
}

DEFAULT_DIMS = [64, 64, 64, 64, 64]


class UsageError(ConfigurationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def load_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc}") from None
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"{path}: {where}: {exc.message}") from None
    return cfg


def _pick(flag, cfg, *keys, default=None):
    if flag is not None:
        return flag
    node = cfg
    for k in keys:
        if not isinstance(node, dict) or k not in node:
            return default
        node = node[k]
    return node


def _resolve_model(args, cfg):
    path = _pick(getattr(args, "weights", None), cfg, "model", "weights")
    if path is not None:
        return model_from_container(Container.read(path))
    mcfg = cfg.get("model", {})
    return harness.build_model(
        mcfg.get("dims", DEFAULT_DIMS), mcfg.get("nonlinearity", "relu"), mcfg.get("seed", 0)
    )


def _resolve_inputs(args, cfg, dim):
    icfg = cfg.get("inputs", {})
    seed = _pick(args.seed, icfg, "seed", default=1)
    kind = harness.InputKind(icfg.get("kind", "iid_gaussian"))
    if kind is harness.InputKind.LOADED:
        if "path" not in icfg:
            raise ConfigurationError("inputs.kind 'loaded' needs inputs.path")
        return harness.InputDistribution.loaded(load_array(icfg["path"]))
    if kind is harness.InputKind.CORRELATED_GAUSSIAN:
        if "cov" in icfg:
            cov = np.asarray(icfg["cov"], dtype=np.float64)
        elif "offdiag" in icfg:
            cov = harness.equicorrelated_cov(dim, icfg["offdiag"])
        else:
            raise ConfigurationError("correlated_gaussian inputs need 'cov' or 'offdiag'")
        return harness.InputDistribution.correlated(cov, seed)
    return harness.InputDistribution.iid(dim, seed)


def _resolve_spec(args, cfg):
    return QuantSpec(
        format=_pick(args.format, cfg, "quant", "format", default="mxint"),
        bits=_pick(args.bits, cfg, "quant", "bits", default=4),
        block_size=_pick(args.block_size, cfg, "quant", "block_size", default=32),
    )


def _require_out(args, cfg, key):
    out = _pick(args.out, cfg, "outputs", key)
    if out is None:
        raise UsageError(f"no output path: pass --out or set outputs.{key}")
    return out


def cmd_calibrate(args, cfg, out=print):
    model = _resolve_model(args, cfg)
    dist = _resolve_inputs(args, cfg, model.input_dim)
    n = _pick(args.n_samples, cfg, "calibration", "n_samples", default=1024)
    eps = _pick(args.eps, cfg, "calibration", "eps", default=linalg.DEFAULT_EPS)
    s_floor = _pick(None, cfg, "calibration", "s_floor", default=calib.DEFAULT_S_FLOOR)
    accs = harness.calibrate_accumulators(model, dist, n)
    stats = []
    for name, acc in zip(model.layer_names, accs):
        try:
            stats.append(calib.finalize(acc, eps, s_floor))
        except NumericalError as exc:
            raise NumericalError(f"{name}: {exc}") from exc
    stats_path = _require_out(args, cfg, "stats")
    stats_to_container(stats, accs, {"n_samples": n, "eps": eps}).write(stats_path)
    model_out = _pick(args.model_out, cfg, "outputs", "model")
    if model_out is not None:
        model_to_container(model).write(model_out)
    for name, s in zip(model.layer_names, stats):
        ratio, _ = calib.autocorr_diagnostic(s)
        out(f"{name}: N={s.count} offdiag_ratio={ratio:.6f}")
    return EXIT_OK


def cmd_quantize(args, cfg, out=print):
    method = Method(_pick(args.method, cfg, "method", default="qera-exact"))
    spec = _resolve_spec(args, cfg)
    rank = _pick(args.rank, cfg, "rank", default=8)
    iters = _pick(args.iterations, cfg, "iterations", default=5 if method is Method.LOFTQ else 1)
    stats_path = _pick(args.stats, cfg, "outputs", "stats")
    if method.needs_stats and stats_path is None:
        raise ConfigurationError(f"method {method.value!r} needs --stats")
    out_path = _require_out(args, cfg, "quantized")
    model = _resolve_model(args, cfg)
    stats = stats_from_container(Container.read(stats_path)) if stats_path else None
    if stats is not None:
        if len(stats) != model.depth:
            raise ConfigurationError(
                f"stats file has {len(stats)} layers, model has {model.depth}"
            )
        for name, s, w in zip(model.layer_names, stats, model.weights):
            if s.dim != w.shape[0]:
                raise ConfigurationError(f"{name}: stats dim {s.dim} != weight rows {w.shape[0]}")
    qm = harness.quantize_model(model, method, spec, rank, stats if method.needs_stats else None, iters)
    meta = {"method": method.value, "rank": rank, "iterations": iters, "quant": spec.to_dict(),
            "average_bits": spec.average_bits}
    layers_to_container(qm, meta).write(out_path)
    out(f"method={method.value} rank={rank} format={spec.format.value} bits={spec.bits} "
        f"block_size={spec.block_size} average_bits={spec.average_bits:.2f}")
    for i, (name, layer, w) in enumerate(zip(model.layer_names, qm.layers, model.weights)):
        line = f"{name}: a_k={layer.a_k.shape[0]}x{layer.a_k.shape[1]} b_k={layer.b_k.shape[0]}x{layer.b_k.shape[1]}"
        line += f" weight_error={layer.meta['weight_errors'][-1]:.6g}"
        if stats is not None:
            line += f" objective={closed_form_objective(layer, w, stats[i].rxx):.6g}"
        out(line)
    return EXIT_OK


def cmd_eval(args, cfg, out=print):
    if args.model is None or args.quantized is None:
        raise UsageError("eval needs --model and --quantized")
    fp = model_from_container(Container.read(args.model))
    qm = layers_from_container(Container.read(args.quantized))
    if fp.depth != qm.depth or any(
        tuple(w.shape) != tuple(layer.wq.shape) for w, layer in zip(fp.weights, qm.layers)
    ):
        raise ConfigurationError("architecture mismatch between model and quantized files")
    dist = _resolve_inputs(args, cfg, fp.input_dim)
    n = _pick(args.n_samples, cfg, "eval", "n_samples", default=128)
    x = dist.sample(n, harness.EVAL_STREAM)
    per_layer = [
        sample_objective(layer, w, h)
        for layer, w, h in zip(qm.layers, fp.weights, fp.layer_inputs(x))
    ]
    doc = {
        "per_layer_objective": per_layer,
        "model_output_error": harness.model_output_error(fp, qm, x),
        "config_echo": {
            "n_samples": n,
            "inputs": {"kind": dist.kind.value, "seed": dist.seed},
            "layers": [
                {"method": layer.method.value, "rank": layer.rank, "quant": layer.meta["spec"]}
                for layer in qm.layers
            ],
        },
    }
    out(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def sweep_config(args, cfg):
    scfg = cfg.get("sweep", {})
    mcfg = cfg.get("model", {})
    icfg = cfg.get("inputs", {})
    if icfg.get("kind", "iid_gaussian") not in ("iid_gaussian", "correlated_gaussian"):
        raise ConfigurationError("sweep supports iid_gaussian or correlated_gaussian inputs")
    if "weights" in mcfg:
        raise ConfigurationError("sweep builds its own synthetic model; drop model.weights")
    kw = {}
    if args.method is not None:
        kw["methods"] = (args.method,)
    elif "methods" in scfg:
        kw["methods"] = tuple(scfg["methods"])
    return harness.SweepConfig(
        axis=_pick(args.axis, scfg, "axis", default="rank"),
        values=tuple(scfg["values"]) if "values" in scfg else None,
        dims=tuple(mcfg.get("dims", DEFAULT_DIMS)),
        nonlinearity=mcfg.get("nonlinearity", "relu"),
        model_seed=mcfg.get("seed", 0),
        input_seed=_pick(args.seed, icfg, "seed", default=1),
        input_offdiag=icfg.get("offdiag", 0.0),
        spec=QuantSpec(
            _pick(args.format, cfg, "quant", "format", default="mxint"),
            _pick(args.bits, cfg, "quant", "bits", default=3),
            _pick(args.block_size, cfg, "quant", "block_size", default=32),
        ),
        rank=_pick(args.rank, cfg, "rank", default=8),
        iterations=_pick(args.iterations, cfg, "iterations", default=5),
        n_calib=_pick(args.n_samples, cfg, "calibration", "n_samples", default=1024),
        n_eval=_pick(None, cfg, "eval", "n_samples", default=128),
        eps=_pick(args.eps, cfg, "calibration", "eps", default=linalg.DEFAULT_EPS),
        s_floor=_pick(None, cfg, "calibration", "s_floor", default=calib.DEFAULT_S_FLOOR),
        **kw,
    )


def cmd_sweep(args, cfg, out=print):
    scfg = sweep_config(args, cfg)
    prefix = _require_out(args, cfg, "report")
    try:
        report = harness.run_sweep(scfg)
    except harness.SweepCellError as exc:
        if isinstance(exc.__cause__, (NumericalError, np.linalg.LinAlgError)):
            raise NumericalError(str(exc)) from exc
        raise ConfigurationError(str(exc)) from exc
    with open(prefix + ".csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_csv())
    with open(prefix + ".json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    out(f"wrote {prefix}.csv and {prefix}.json ({len(report.points)} cells)")
    return EXIT_OK


def cmd_selftest(args, cfg, out=print):
    results = selftest.run(seed=args.seed or 0, corrupt=args.corrupt, echo=out)
    failed = [name for name, ok, _, _ in results if not ok]
    total = sum(r[3] for r in results)
    out(f"{len(results) - len(failed)}/{len(results)} property families passed in {total:.1f}s")
    if failed:
        out("FAILED: " + ", ".join(failed))
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "quantize": cmd_quantize,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "selftest": cmd_selftest,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config")
    common.add_argument("--method", choices=_METHODS)
    common.add_argument("--rank", type=int, metavar="K")
    common.add_argument("--iterations", type=int, metavar="T", help="LoftQ rounds")
    common.add_argument("--bits", type=int, metavar="B")
    common.add_argument("--block-size", type=int, metavar="S")
    common.add_argument("--format", choices=["mxint", "affine-int"])
    common.add_argument("--eps", type=float, help="relative diagonal regularization")
    common.add_argument("--seed", type=int, help="input sampling seed")
    common.add_argument("--out", metavar="PATH", help="output file (sweep: path prefix)")
    common.add_argument("--n-samples", type=int, metavar="N")

    parser = _Parser(prog="qerecon", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("calibrate", parents=[common], help="collect activation statistics")
    p.add_argument("--weights", metavar="PATH", help="model container instead of a synthetic model")
    p.add_argument("--model-out", metavar="PATH", help="also write the FP model container")
    p = sub.add_parser("quantize", parents=[common], help="quantize and reconstruct every layer")
    p.add_argument("--weights", metavar="PATH")
    p.add_argument("--stats", metavar="PATH", help="stats container from calibrate")
    p = sub.add_parser("eval", parents=[common], help="compare a quantized model to its FP model")
    p.add_argument("--model", metavar="PATH")
    p.add_argument("--quantized", metavar="PATH")
    p = sub.add_parser("sweep", parents=[common], help="run a rank / LoftQ / calibration sweep")
    p.add_argument("--axis", choices=[a.value for a in harness.SweepAxis])
    p = sub.add_parser("selftest", parents=[common], help="run the built-in invariant suite")
    p.add_argument("--corrupt", choices=["spsd_sqrt"], help=argparse.SUPPRESS)
    return parser


def main(argv=None, out=print):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg, out=out)
    except OSError as exc:
        print(f"qerecon {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, ValueError, KeyError) as exc:
        print(f"qerecon {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"qerecon {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
