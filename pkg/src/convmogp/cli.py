"""Command-line interface.

Every subcommand reads an optional JSON run configuration (``--config``)
and writes its results under ``--out``. Exit codes: 0 success, 1 check
failed, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from .errors import (
    ConfigError,
    ConvGPError,
    DataError,
    DegenerateCurvatureError,
    InvalidArgumentError,
    NumericFailureError,
    OptimizerStalledError,
)
from .gram import InducingSet, MultiOutputDataset, NoiseParams, Variant
from .io import (
    CsvSchema,
    fmt,
    load_artifact,
    load_csv_dataset,
    load_test_inputs,
    save_artifact,
    write_csv_dataset,
    write_table,
)
from .kernels import Ode1KernelParams, kernel_from_dict
from .models import ModelState, log_marginal, predict

log = logging.getLogger("convmogp")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_VARIANTS = [v.value for v in Variant]


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "dataset": _obj({
        "path": {"type": "string"},
        "outputs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "input_dim": _INT1,
    }, ["path"]),
    "kernel": _obj({
        "kind": {"enum": ["gaussian", "ode1"]},
        "params": {"oneOf": [{"const": "learn"}, {"type": "object"}]},
        "num_latent": _INT1,
        "standardize": {"type": "boolean"},
    }, ["kind"]),
    "noise": {"type": "array", "items": _POS, "minItems": 1},
    "variant": {"enum": _VARIANTS},
    "K": _INT1,
    "inducing_init": {"enum": ["kmeans", "equispaced"]},
    "mean_mode": {"enum": ["empirical", "none", "basal"]},
    "optimizer": _obj({
        "max_iters": _INT1, "grad_tol": _POS, "func_tol": _POS, "x_tol": _POS,
        "initial_sigma_scg": _POS,
    }),
    "optimize_inducing": {"type": "boolean"},
    "warm_start": {"type": "string"},
    "outputs_dir": {"type": "string"},
    "predict": _obj({
        "artifact": {"type": "string"},
        "test_path": {"type": "string"},
        "include_noise": {"type": "boolean"},
    }),
    "sample": _obj({
        "kernel": {"type": "object"},
        "noise": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "outputs": {"type": "array", "items": {"type": "string"}},
        "grid": _obj({"lo": _NUM, "hi": _NUM, "n": _INT1}, ["lo", "hi", "n"]),
    }, ["kernel", "noise", "grid"]),
    "experiment": _obj({
        "name": {"enum": ["toy", "missing_range", "heterotopic"]},
        "settings": {"type": "object"},
    }, ["name"]),
    "gradcheck": _obj({
        "variants": {"type": "array", "items": {"enum": _VARIANTS}},
        "kernels": {"type": "array", "items": {"enum": ["gaussian", "ode1"]}},
        "n_per_output": _INT1,
        "K": _INT1,
        "tolerance": _POS,
    }),
    "snr": _obj({
        "artifact": {"type": "string"},
        "num_outputs": _INT1,
        "n_per_output": _INT1,
        "K": _INT1,
        "max_iters": _INT1,
    }),
}, ["seed"])


# ---------------------------------------------------------------------------
# configuration handling
# ---------------------------------------------------------------------------


def load_config(path, seed_override=None):
    """Read and validate a run configuration; relative paths are resolved."""
    if path is None:
        cfg = {"seed": 0}
        base = os.getcwd()
    else:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        base = os.path.dirname(os.path.abspath(path))
    if seed_override is not None:
        cfg = dict(cfg, seed=seed_override)
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    return _resolve_paths(cfg, base)


def _resolve_paths(cfg, base):
    def fix(p):
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))

    cfg = json.loads(json.dumps(cfg))
    if "dataset" in cfg:
        cfg["dataset"]["path"] = fix(cfg["dataset"]["path"])
    for sec, key in (("predict", "artifact"), ("predict", "test_path"), ("snr", "artifact")):
        if key in cfg.get(sec, {}):
            cfg[sec][key] = fix(cfg[sec][key])
    if "warm_start" in cfg:
        cfg["warm_start"] = fix(cfg["warm_start"])
    return cfg


def _optim_config(cfg, seed):
    from .optimize import OptimConfig

    return OptimConfig(seed=seed, **cfg.get("optimizer", {}))


def _out_dir(args, cfg):
    out = args.out or cfg.get("outputs_dir") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_dataset(cfg):
    if "dataset" not in cfg:
        raise ConfigError("config needs a dataset section")
    ds = cfg["dataset"]
    schema = CsvSchema(tuple(ds["outputs"]) if "outputs" in ds else None, ds.get("input_dim"))
    try:
        return load_csv_dataset(ds["path"], schema)
    except OSError as exc:
        raise DataError(f"cannot read dataset {ds['path']}: {exc.strerror}") from None


def build_state(cfg, dataset):
    """Initial model state from a run configuration."""
    from .optimize import default_kernel, default_noise, initial_inducing

    if "variant" not in cfg or "kernel" not in cfg:
        raise ConfigError("config needs kernel and variant")
    variant = Variant.parse(cfg["variant"])
    kc = cfg["kernel"]
    K = cfg.get("K")
    if variant.sparse:
        if K is None:
            raise ConfigError(f"variant {variant.value} needs K")
        if K > dataset.n_total:
            raise ConfigError(f"K={K} exceeds the number of training points {dataset.n_total}")
    if "warm_start" in cfg:
        prev = load_artifact(cfg["warm_start"])
        if prev.kernel.num_outputs != dataset.num_outputs:
            raise DataError("warm-start artifact has a different number of outputs")
        state = prev.replace(dataset=dataset, variant=variant,
                             inducing=prev.inducing if variant.sparse else None)
        if variant.sparse and state.inducing is None:
            state = state.replace(inducing=initial_inducing(
                dataset, K, cfg.get("inducing_init", "kmeans"), cfg["seed"]))
        return state
    params = kc.get("params", "learn")
    if params == "learn":
        kernel = default_kernel(dataset, kc["kind"], kc.get("num_latent", 1),
                                kc.get("standardize", True))
    else:
        try:
            kernel = kernel_from_dict(dict(params, kind=kc["kind"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"kernel params incomplete: {exc}") from None
        except InvalidArgumentError as exc:
            raise ConfigError(f"kernel params invalid: {exc}") from None
    if kernel.num_outputs != dataset.num_outputs:
        raise ConfigError(f"kernel has {kernel.num_outputs} outputs but the dataset has "
                          f"{dataset.num_outputs}")
    noise = NoiseParams(cfg["noise"]) if "noise" in cfg else default_noise(dataset)
    inducing = None
    if variant.sparse:
        inducing = initial_inducing(dataset, K, cfg.get("inducing_init", "kmeans"), cfg["seed"])
    return ModelState(kernel, noise, dataset, variant, inducing, cfg.get("mean_mode", "empirical"))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(args):
    from .optimize import fit

    cfg = load_config(args.config, args.seed)
    out = _out_dir(args, cfg)
    dataset = _load_dataset(cfg)
    state = build_state(cfg, dataset)
    res = fit(state, _optim_config(cfg, cfg["seed"]), cfg.get("optimize_inducing", True))
    save_artifact(os.path.join(out, "model.json"), res.state,
                  {"log_marginal": -res.final_objective, "message": res.message})
    write_table(os.path.join(out, "trace.csv"),
                ["iteration", "objective", "grad_norm", "accepted", "wall_time"],
                res.trace.to_rows())
    print(f"fit {state.variant.value}: objective {res.initial_objective:.6g} -> "
          f"{res.final_objective:.6g} ({res.message}, {len(res.trace)} iterations)")
    return EXIT_OK


def cmd_predict(args):
    cfg = load_config(args.config, args.seed) if args.config else {"seed": 0}
    pc = cfg.get("predict", {})
    artifact = args.artifact or pc.get("artifact")
    test = args.test or pc.get("test_path")
    if not artifact or not test:
        raise ConfigError("predict needs an artifact and a test file")
    include_noise = args.include_noise or pc.get("include_noise", False)
    out = _out_dir(args, cfg)
    state = load_artifact(artifact)
    ds = state.dataset
    try:
        inputs, divs, order = load_test_inputs(test, ds.names, ds.input_dim)
    except OSError as exc:
        raise DataError(f"cannot read test file {test}: {exc.strerror}") from None
    pred = predict(state, inputs, include_noise=include_noise, test_divisors=divs)
    n = sum(len(o) for o in order)
    rows = [None] * n
    for d, idx in enumerate(order):
        for i, r in enumerate(idx):
            rows[r] = [ds.names[d]] + [fmt(v) for v in inputs[d][i]] + \
                [fmt(pred.mean[d][i]), fmt(pred.variance[d][i])]
    header = ["output_id"] + [f"x{j + 1}" for j in range(ds.input_dim)] + ["mean", "variance"]
    write_table(os.path.join(out, "predictions.csv"), header, rows)
    print(f"predict: {n} rows")
    return EXIT_OK


def cmd_sample(args):
    from .experiments import sample_full_gp

    cfg = load_config(args.config, args.seed)
    if "sample" not in cfg:
        raise ConfigError("config needs a sample section")
    sc = cfg["sample"]
    out = _out_dir(args, cfg)
    try:
        kernel = kernel_from_dict(sc["kernel"])
    except (KeyError, TypeError, InvalidArgumentError) as exc:
        raise ConfigError(f"sample kernel invalid: {exc}") from None
    D = kernel.num_outputs
    if len(sc["noise"]) != D:
        raise ConfigError(f"sample needs {D} noise variances")
    if kernel.input_dim != 1:
        raise ConfigError("grid sampling supports one input dimension")
    g = sc["grid"]
    x = np.linspace(g["lo"], g["hi"], g["n"])[:, None]
    sample = sample_full_gp(kernel, np.array(sc["noise"], float), [x] * D, cfg["seed"])
    names = sc.get("outputs") or [str(d) for d in range(D)]
    if len(names) != D:
        raise ConfigError(f"sample needs {D} output names")
    ds = MultiOutputDataset.from_arrays([b.inputs for b in sample.dataset.blocks],
                                        [b.targets for b in sample.dataset.blocks], names=names)
    write_csv_dataset(ds, os.path.join(out, "samples.csv"))
    truth = MultiOutputDataset.from_arrays([b.inputs for b in ds.blocks], sample.f, names=names)
    write_csv_dataset(truth, os.path.join(out, "truth.csv"))
    print(f"sample: {ds.n_total} rows")
    return EXIT_OK


def _metric_tables(out, result):
    for metric in ("smse", "msll"):
        write_table(os.path.join(out, f"{metric}.csv"), ["model", "output", "mean", "std"],
                    result.table(metric))
    lines = []
    for metric, title in (("smse", "SMSE"), ("msll", "MSLL")):
        models = list(result.metrics)
        D = result.metrics[models[0]].smse.shape[1]
        lines.append(title)
        lines.append("\t".join(["output"] + models))
        for d in range(D):
            cells = [f"{result.metrics[m].mean(metric)[d]:.4g} +- "
                     f"{result.metrics[m].std(metric)[d]:.2g}" for m in models]
            lines.append("\t".join([str(d + 1)] + cells))
        lines.append("")
    with open(os.path.join(out, "tables.txt"), "w") as fh:
        fh.write("\n".join(lines))


def cmd_experiment(args):
    from .experiments import (
        ExperimentConfig,
        ToyResult,
        run_heterotopic,
        run_missing_range,
        run_toy,
    )

    cfg = load_config(args.config, args.seed)
    ec = cfg.get("experiment", {"name": "toy"})
    out = _out_dir(args, cfg)
    settings = dict(ec.get("settings", {}))
    try:
        if ec["name"] == "heterotopic":
            seeds = settings.pop("seeds", list(range(10)))
            rows = []
            for s in seeds:
                r = run_heterotopic(int(s), **settings)
                rows.append((int(s), r["PITC"], r["INDEPENDENT"]))
            write_table(os.path.join(out, "mae.csv"), ["seed", "PITC", "INDEPENDENT"], rows)
            wins = sum(r[1] <= r[2] for r in rows)
            print(f"heterotopic: PITC MAE <= independent MAE in {wins}/{len(rows)} seeds")
            return EXIT_OK
        if ec["name"] == "missing_range":
            settings.setdefault("variants", ["FULL", "INDEPENDENT", "DTC", "FITC", "PITC"])
            settings.setdefault("missing", {"3": [-0.8, 0.0]})
        ecfg = ExperimentConfig.from_dict(settings)
    except TypeError as exc:
        raise ConfigError(f"experiment settings invalid: {exc}") from None
    if ec["name"] == "toy":
        res = run_toy(ecfg)
        _metric_tables(out, res)
        write_table(os.path.join(out, "timing.csv"), ["model", "median_iteration_seconds"],
                    sorted(res.iteration_time.items()))
    else:
        res = run_missing_range(ecfg)
        _metric_tables(out, ToyResult(res.metrics, {}))
        rows = [(m, s, float(v)) for m, vals in res.gap_rmse.items()
                for s, v in zip(sorted(ecfg.seeds), vals)]
        write_table(os.path.join(out, "gap_rmse.csv"), ["model", "seed", "rmse"], rows)
        for m, (x, mean, sd, truth) in res.plot_data.items():
            write_table(os.path.join(out, f"plot_{m}.csv"),
                        ["x", "mean", "lower", "upper", "truth"],
                        [(float(a), float(b), float(b - 2 * c), float(b + 2 * c), float(t))
                         for a, b, c, t in zip(x, mean, sd, truth)])
    print(f"experiment {ec['name']}: results in {out}")
    return EXIT_OK


def gradcheck_instances(kind, seed, n_per_output, K):
    """Small problems for gradient checks: toy kernel or a random ODE model."""
    from .experiments import TOY_KERNEL, TOY_NOISE, sample_full_gp

    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        kernel = kernel_from_dict(TOY_KERNEL)
        noise = NoiseParams(TOY_NOISE)
        X = [np.sort(rng.uniform(-1, 1, n_per_output))[:, None] for _ in range(4)]
        Z = np.linspace(-1, 1, K)[:, None]
    else:
        kernel = Ode1KernelParams(rng.normal(size=(3, 1)), rng.uniform(0.5, 2, 3),
                                  rng.uniform(0.3, 0.8, 1))
        noise = NoiseParams(rng.uniform(0.05, 0.3, 3))
        X = [np.sort(rng.uniform(0, 3, n_per_output))[:, None] for _ in range(3)]
        Z = ((np.arange(K) + rng.uniform(0.2, 0.8, K)) * 3.0 / K)[:, None]
    sample = sample_full_gp(kernel, noise, X, seed)
    return kernel, noise, sample.dataset, InducingSet(Z)


def cmd_gradcheck(args):
    from .gradients import model_gradcheck

    cfg = load_config(args.config, args.seed)
    gc = cfg.get("gradcheck", {})
    variants = gc.get("variants", ["FULL", "INDEPENDENT", "DTC", "FITC", "PITC"])
    kinds = gc.get("kernels", ["gaussian", "ode1"])
    tol = gc.get("tolerance", 1e-4)
    worst = 0.0
    for kind in kinds:
        kernel, noise, ds, Z = gradcheck_instances(kind, cfg["seed"], gc.get("n_per_output", 8),
                                                   gc.get("K", 5))
        for v in variants:
            v = Variant.parse(v)
            st = ModelState(kernel, noise, ds, v, Z if v.sparse else None)
            r = model_gradcheck(st)
            worst = max(worst, r.max_error)
            print(f"{kind} {v.value}: max relative error {r.max_error:.3e}")
    print(f"max relative error {worst:.3e}")
    return EXIT_OK if worst <= tol else EXIT_CHECK


def snr_instance(seed, D=5, n_per_output=15, K=6):
    """Synthetic ODE problem with known sensitivities (one of them zero)."""
    from .experiments import sample_full_gp

    S = np.array([1.5, 1.0, 0.0, -1.2, 0.8, 0.5, -0.7, 1.1])[:D] if D <= 8 else \
        np.random.default_rng(seed).normal(size=D)
    kernel = Ode1KernelParams(S[:, None], np.linspace(0.6, 1.6, D), [1.0])
    noise = NoiseParams(np.full(D, 0.02))
    t = np.linspace(0.0, 6.0, n_per_output)[:, None]
    sample = sample_full_gp(kernel, noise, [t] * D, seed)
    names = [f"gene{d + 1}" for d in range(D)]
    ds = MultiOutputDataset.from_arrays([b.inputs for b in sample.dataset.blocks],
                                        [b.targets for b in sample.dataset.blocks], names=names)
    Z = InducingSet(np.linspace(0.0, 6.0, K)[:, None])
    return ModelState(kernel, noise, ds, Variant.PITC, Z)


def cmd_snr(args):
    from .laplace import snr_report
    from .optimize import OptimConfig, fit

    cfg = load_config(args.config, args.seed)
    sc = cfg.get("snr", {})
    out = _out_dir(args, cfg)
    if "artifact" in sc:
        state = load_artifact(sc["artifact"])
    else:
        state = snr_instance(cfg["seed"], sc.get("num_outputs", 5), sc.get("n_per_output", 15),
                             sc.get("K", 6))
        state = fit(state, OptimConfig(max_iters=sc.get("max_iters", 300))).state
    report = snr_report(state)
    rows = [(rank + 1,) + r for rank, r in enumerate(report.rows())]
    write_table(os.path.join(out, "snr.csv"),
                ["rank", "output", "name", "S_hat", "sigma_S", "snr"], rows)
    print("rank\tname\tS_hat\tsigma_S\tsnr")
    for r in rows:
        print(f"{r[0]}\t{r[2]}\t{r[3]:.4g}\t{r[4]:.4g}\t{r[5]:.4g}")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "sample": cmd_sample,
    "experiment": cmd_experiment,
    "gradcheck": cmd_gradcheck,
    "snr": cmd_snr,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="convmogp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--threads", type=int, help="limit BLAS threads")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "predict":
            p.add_argument("--artifact", help="fitted model file")
            p.add_argument("--test", help="CSV of test inputs")
            p.add_argument("--include-noise", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limits = threadpool_limits(limits=args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limits:
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailureError, DegenerateCurvatureError, OptimizerStalledError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConvGPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
