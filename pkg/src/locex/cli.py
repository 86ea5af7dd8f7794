"""Command-line front end.

Each subcommand reads one JSON config (schema-validated, unknown keys
rejected), runs the pipeline, and writes machine-readable reports into the
output directory: JSON always, CSV for curves and matrices, PNG figures
rendered last from the same numbers.  Exit codes: 0 success, 2 bad
config/usage, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import jsonschema

from . import __version__
from .analysis import (
    GRADIENT_SCALE_METHODS,
    INPUT_SCALE_METHODS,
    MASK_METHODS,
    check_recovery,
    crossover_sign_test,
    curves_to_csv,
    equivalence_matrix,
    nfl_construct,
    perturbation_test,
    reparam_recovery_check,
)
from .core import RandomStream
from .dataio import (
    Dataset,
    knn_impute,
    load_csv,
    normalize,
    split,
    synth_generate,
)
from .engine import METHODS, explain, registry
from .models import (
    Architecture,
    LinearModel,
    QuadraticModel,
    SinusoidModel,
    TrainConfig,
    load_model,
    save_model,
    train_sgd,
)

# ------------------------------------------------------------------ schemas

_SYNTH = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["linear-regression", "logistic-blobs", "friedman"]},
        "n": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
        "noise": {"type": "number", "minimum": 0},
        "separation": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["kind", "n", "d"],
}

_CSV = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "path": {"type": "string"},
        "target": {"type": "string"},
        "missing": {"type": "string"},
        "impute_k": {"type": "integer", "minimum": 1},
    },
    "required": ["path", "target"],
}

_DATASET = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "synth": _SYNTH,
        "csv": _CSV,
        "normalize": {"type": "boolean"},
    },
    "oneOf": [{"required": ["synth"]}, {"required": ["csv"]}],
}

_MODEL = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "path": {"type": "string"},
        "kind": {"enum": ["linear", "logistic", "mlp"]},
        "hidden_layers": {"type": "integer", "minimum": 1},
        "hidden_units": {"type": "integer", "minimum": 1},
        "activation": {"enum": ["tanh", "relu", "sigmoid"]},
        "epochs": {"type": "integer", "minimum": 1},
        "batch": {"type": "integer", "minimum": 1},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
    },
    "oneOf": [{"required": ["path"]}, {"required": ["kind"]}],
}

_METHOD = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"enum": list(METHODS)},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "n_samples": {"type": "integer", "minimum": 1},
        "param": {"enum": ["of_noise", "of_perturbed_input"]},
        "kernel_width": {"type": "number", "exclusiveMinimum": 0},
        "low": {"type": "number"},
        "ridge": {"type": "number", "minimum": 0},
        "solver": {"enum": ["closed_form", "iterative"]},
    },
    "required": ["name"],
}

_POINTS = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "count": {"type": "integer", "minimum": 1},
        "explicit": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "minItems": 1,
                      "items": {"type": "number"}},
        },
    },
    "oneOf": [{"required": ["count"]}, {"required": ["explicit"]}],
}

_NAME_LIST = {"type": "array", "minItems": 1,
              "items": {"enum": list(METHODS)}}

SCHEMAS = {
    "train": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "dataset": _DATASET,
            "model": _MODEL,
            "seed": {"type": "integer", "minimum": 0},
        },
        "required": ["dataset", "model"],
    },
    "explain": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "dataset": _DATASET,
            "model": _MODEL,
            "methods": {"type": "array", "minItems": 1, "items": _METHOD},
            "points": _POINTS,
            "seed": {"type": "integer", "minimum": 0},
        },
        "required": ["dataset", "model", "methods", "points"],
    },
    "equivalence": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "dataset": _DATASET,
            "model": _MODEL,
            "points": _POINTS,
            "methods": _NAME_LIST,
            "sigma": {"type": "number", "exclusiveMinimum": 0},
            "n_samples": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer", "minimum": 0},
        },
        "required": ["dataset", "model", "points"],
    },
    "recover": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "weights": {"type": "array", "minItems": 1,
                        "items": {"type": "number"}},
            "intercept": {"type": "number"},
            "x0": {"type": "array", "minItems": 1,
                   "items": {"type": "number"}},
            "methods": _NAME_LIST,
            "include_reparam": {"type": "boolean"},
            "include_sinusoid": {"type": "boolean"},
            "n_samples": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer", "minimum": 0},
        },
        "required": ["weights", "x0"],
    },
    "nfl": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "function": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "kind": {"enum": ["sin", "square", "linear"]},
                    "weights": {"type": "array", "minItems": 1,
                                "items": {"type": "number"}},
                    "intercept": {"type": "number"},
                },
                "required": ["kind"],
            },
            "x0": {"type": "array", "minItems": 1,
                   "items": {"type": "number"}},
            "domain": {
                "type": "array", "minItems": 1,
                "items": {"type": "array", "minItems": 2, "maxItems": 2,
                          "items": {"type": "number"}},
            },
            "sigma": {"type": "number", "exclusiveMinimum": 0},
            "n_samples": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer", "minimum": 0},
        },
        "required": ["function", "x0", "domain"],
    },
    "perturb-test": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "dataset": _DATASET,
            "model": _MODEL,
            "methods": _NAME_LIST,
            "points": _POINTS,
            "ks": {"type": "array", "minItems": 1,
                   "items": {"type": "integer", "minimum": 0}},
            "noises": {"type": "array", "minItems": 1,
                       "items": {"enum": ["binary-zero", "gaussian"]}},
            "sigma": {"type": "number", "exclusiveMinimum": 0},
            "attr_sigma": {"type": "number", "exclusiveMinimum": 0},
            "trials": {"type": "integer", "minimum": 1},
            "n_samples": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer", "minimum": 0},
        },
        "required": ["dataset", "model", "points", "ks"],
    },
}


class ConfigError(Exception):
    pass


# ------------------------------------------------------------------ helpers

def _load_config(path: str, command: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config {path}: {e.message} (at {where})") from e
    return cfg


def _build_dataset(cfg: dict, seed: int):
    ds_cfg = cfg["dataset"]
    if "synth" in ds_cfg:
        s = ds_cfg["synth"]
        ds = synth_generate(s["kind"], s["n"], s["d"],
                            noise=s.get("noise", 0.1), seed=seed,
                            separation=s.get("separation", 4.0))
    else:
        c = ds_cfg["csv"]
        table = load_csv(c["path"], c["target"], c.get("missing", ""))
        if table.missing_mask().any():
            table = knn_impute(table, c.get("impute_k", 5))
        ds = Dataset(table.features, table.targets, table.feature_names)
    if ds_cfg.get("normalize", True):
        ds = normalize(ds)
    return ds


def _build_model(cfg: dict, dataset, seed: int):
    m = cfg["model"]
    if "path" in m:
        return load_model(m["path"]), None
    train, test = split(dataset, 0.8, seed)
    arch = Architecture(
        kind=m["kind"],
        hidden_layers=m.get("hidden_layers", 3),
        hidden_units=m.get("hidden_units", 8),
        activation=m.get("activation", "tanh"),
    )
    tc = TrainConfig(epochs=m.get("epochs", 300),
                     batch_size=m.get("batch", 64),
                     learning_rate=m.get("learning_rate", 0.05),
                     seed=seed)
    result = train_sgd(train.features, train.targets, arch, tc)
    model = result.model
    pred = model.predict_batch(test.features)
    if model.output_kind == "probability":
        metric = {"test_accuracy":
                  float(np.mean((pred > 0.5) == (test.targets > 0.5)))}
    else:
        metric = {"test_mse": float(np.mean((pred - test.targets) ** 2))}
    info = {
        "architecture": {"kind": arch.kind,
                         "hidden_layers": arch.hidden_layers,
                         "hidden_units": arch.hidden_units,
                         "activation": arch.activation},
        "epochs": tc.epochs,
        "final_train_loss": float(result.epoch_losses[-1]),
        "epoch_losses": [float(v) for v in result.epoch_losses],
        **metric,
    }
    return model, info


def _pick_points(cfg: dict, dataset, seed: int) -> np.ndarray:
    p = cfg["points"]
    if "explicit" in p:
        return np.asarray(p["explicit"], dtype=np.float64)
    _, test = split(dataset, 0.8, seed)
    count = p["count"]
    if count > test.n:
        raise ValueError(f"requested {count} points but the test split has "
                         f"only {test.n}")
    return test.features[:count]


def _instance_from_cfg(mc: dict):
    kwargs = {k: mc[k] for k in ("sigma", "n_samples", "param",
                                 "kernel_width", "low", "ridge") if k in mc}
    return registry(mc["name"], **kwargs), mc.get("solver", "closed_form")


def _report_envelope(command: str, cfg: dict, seed: int,
                     no_timestamp: bool) -> dict:
    env = {"command": command, "version": __version__, "seed": seed,
           "config": cfg}
    if not no_timestamp:
        env["timestamp"] = datetime.now(timezone.utc).isoformat()
    return env


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _seed(cfg: dict, args) -> int:
    return args.seed if args.seed is not None else cfg.get("seed", 0)


# ----------------------------------------------------------------- commands

def cmd_train(cfg, args, out: Path) -> None:
    seed = _seed(cfg, args)
    ds = _build_dataset(cfg, seed)
    model, info = _build_model(cfg, ds, seed)
    if info is None:
        raise ValueError("train requires a model spec, not a model path")
    save_model(model, out / "model.json")
    report = _report_envelope("train", cfg, seed, args.no_timestamp)
    losses = info.pop("epoch_losses")
    report["training"] = info
    report["dataset"] = {"n": ds.n, "d": ds.dim,
                         "provenance": ds.provenance}
    _write_json(report, out / "train_report.json")
    if not args.no_figures:
        from .figures import plot_training_curve
        plot_training_curve(losses, out / "training_curve.png")


def cmd_explain(cfg, args, out: Path) -> None:
    seed = _seed(cfg, args)
    ds = _build_dataset(cfg, seed)
    model, _ = _build_model(cfg, ds, seed)
    points = _pick_points(cfg, ds, seed)
    if points.shape[1] != model.input_dim:
        raise ValueError(f"points have dimension {points.shape[1]}, model "
                         f"expects {model.input_dim}")
    rng = RandomStream(seed)
    specs = [_instance_from_cfg(mc) for mc in cfg["methods"]]

    def one_point(p):
        x0 = points[p]
        results = []
        for (inst, solver), mc in zip(specs, cfg["methods"]):
            exp = explain(model, x0, inst,
                          rng=rng.fork(f"{mc['name']}/{p}"), solver=solver)
            results.append((p, mc["name"], exp))
        return results

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as ex:
            nested = list(ex.map(one_point, range(points.shape[0])))
    else:
        nested = [one_point(p) for p in range(points.shape[0])]

    flat = [item for group in nested for item in group]
    report = _report_envelope("explain", cfg, seed, args.no_timestamp)
    report["explanations"] = [
        {"point_index": p, "method": name, **exp.to_dict()}
        for p, name, exp in flat
    ]
    _write_json(report, out / "explanations.json")

    import csv as _csv

    with open(out / "weights.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["point_index", "method", "feature", "weight"])
        for p, name, exp in flat:
            for j, w in enumerate(exp.weights):
                writer.writerow([p, name, ds.feature_names[j],
                                 repr(float(w))])
    if not args.no_figures:
        from .figures import plot_weights
        first = {name: exp.weights for p, name, exp in flat if p == 0}
        plot_weights(first, ds.feature_names, out / "weights_point0.png")


def cmd_equivalence(cfg, args, out: Path) -> None:
    seed = _seed(cfg, args)
    ds = _build_dataset(cfg, seed)
    model, _ = _build_model(cfg, ds, seed)
    points = _pick_points(cfg, ds, seed)
    methods = tuple(cfg.get("methods", METHODS))
    res = equivalence_matrix(model, points, RandomStream(seed),
                             methods=methods,
                             sigma=cfg.get("sigma", 0.1),
                             n_samples=cfg.get("n_samples", 1000))
    report = _report_envelope("equivalence", cfg, seed, args.no_timestamp)
    report["matrix"] = res.to_dict()
    report["diagonal_is_row_minimum"] = res.diagonal_is_row_minimum()
    if set(GRADIENT_SCALE_METHODS) | set(INPUT_SCALE_METHODS) <= set(methods):
        within, cross = res.cluster_means(GRADIENT_SCALE_METHODS,
                                          INPUT_SCALE_METHODS)
        report["cluster_mean_within"] = within
        report["cluster_mean_cross"] = cross
    _write_json(report, out / "equivalence.json")
    res.to_csv(out / "equivalence.csv")
    if not args.no_figures:
        from .figures import plot_equivalence_heatmap
        plot_equivalence_heatmap(res, out / "equivalence.png")


def cmd_recover(cfg, args, out: Path) -> None:
    seed = _seed(cfg, args)
    rng = RandomStream(seed)
    w = np.asarray(cfg["weights"], dtype=np.float64)
    x0 = np.asarray(cfg["x0"], dtype=np.float64)
    model = LinearModel(w, cfg.get("intercept", 0.0))
    n_samples = cfg.get("n_samples", 1000)
    methods = cfg.get("methods", list(METHODS))

    reports = [check_recovery(model, x0, m, rng.fork(f"rec/{m}"),
                              n_samples=n_samples) for m in methods]
    if cfg.get("include_reparam", True):
        for m in ("integrated_gradients", "grad_x_input", "lime",
                  "kernelshap"):
            reports.append(reparam_recovery_check(
                model, x0, m, rng.fork(f"reparam/{m}"),
                n_samples=n_samples))
    sinusoid = []
    if cfg.get("include_sinusoid", True):
        sin_model = SinusoidModel.mask_invisible(x0)
        sinusoid = [check_recovery(sin_model, x0, m, rng.fork(f"sin/{m}"),
                                   n_samples=n_samples)
                    for m in MASK_METHODS]

    report = _report_envelope("recover", cfg, seed, args.no_timestamp)
    report["recovery"] = [r.to_dict() for r in reports]
    report["sinusoid"] = [r.to_dict() for r in sinusoid]
    _write_json(report, out / "recovery.json")

    import csv as _csv

    with open(out / "recovery.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["case", "method", "target_kind", "l1", "rel_l1",
                         "recovered"])
        for tag, rows in (("linear", reports), ("sinusoid", sinusoid)):
            for r in rows:
                writer.writerow([tag, r.method, r.target_kind,
                                 repr(r.l1),
                                 "" if r.rel_l1 is None else repr(r.rel_l1),
                                 r.recovered])
    if not args.no_figures:
        from .figures import plot_recovery
        plot_recovery(reports + sinusoid, out / "recovery.png")


def _nfl_model(fn_cfg: dict, d: int):
    kind = fn_cfg["kind"]
    if kind == "sin":
        return SinusoidModel(fn_cfg.get("weights", np.ones(d)))
    if kind == "square":
        return QuadraticModel(fn_cfg.get("weights", np.ones(d)))
    return LinearModel(fn_cfg.get("weights", np.ones(d)),
                       fn_cfg.get("intercept", 0.0))


def cmd_nfl(cfg, args, out: Path) -> None:
    seed = _seed(cfg, args)
    x0 = np.asarray(cfg["x0"], dtype=np.float64)
    domain = np.asarray(cfg["domain"], dtype=np.float64)
    model = _nfl_model(cfg["function"], x0.size)
    rep = nfl_construct(model, x0, domain, RandomStream(seed),
                        sigma=cfg.get("sigma", 0.01),
                        n_samples=cfg.get("n_samples", 1000))
    report = _report_envelope("nfl", cfg, seed, args.no_timestamp)
    report["result"] = rep.to_dict()
    _write_json(report, out / "nfl.json")
    if not args.no_figures:
        from .figures import plot_gap_construction
        plot_gap_construction(rep, model, domain, out / "nfl.png")


def cmd_perturb_test(cfg, args, out: Path) -> None:
    seed = _seed(cfg, args)
    ds = _build_dataset(cfg, seed)
    model, _ = _build_model(cfg, ds, seed)
    points = _pick_points(cfg, ds, seed)
    methods = cfg.get("methods", list(METHODS))
    rng = RandomStream(seed)
    n_samples = cfg.get("n_samples", 1000)

    attributions = {}
    for m in methods:
        # attr_sigma sets the noise width of the attributions under test,
        # independent of the sigma used by the perturbation probe itself
        inst = registry(m, n_samples=n_samples,
                        sigma=cfg.get("attr_sigma", 0.1))
        ws = [explain(model, points[p], inst, rng=rng.fork(f"{m}/{p}")).weights
              for p in range(points.shape[0])]
        attributions[m] = np.vstack(ws)

    all_curves = []
    results = {}
    for noise in cfg.get("noises", ["binary-zero", "gaussian"]):
        curves = perturbation_test(
            model, points, attributions, ks=cfg["ks"], noise=noise,
            sigma=cfg.get("sigma", 0.1), trials=cfg.get("trials", 100),
            rng=rng.fork(f"perturb/{noise}"))
        all_curves.extend(curves)
        entry = {"curves": [c.to_dict() for c in curves]}
        low, high = INPUT_SCALE_METHODS, GRADIENT_SCALE_METHODS
        if noise == "gaussian":
            low, high = high, low
        present = set(methods)
        if set(low) <= present and set(high) <= present:
            entry["sign_test"] = crossover_sign_test(curves, low, high)
            entry["sign_test"]["low_cluster"] = list(low)
            entry["sign_test"]["high_cluster"] = list(high)
        results[noise] = entry

    report = _report_envelope("perturb-test", cfg, seed, args.no_timestamp)
    report["results"] = results
    _write_json(report, out / "perturb.json")
    curves_to_csv(all_curves, out / "perturb.csv")
    if not args.no_figures:
        from .figures import plot_perturbation_curves
        for noise in results:
            subset = [c for c in all_curves if c.noise == noise]
            plot_perturbation_curves(subset, out / f"perturb_{noise}.png")


HANDLERS = {
    "train": cmd_train,
    "explain": cmd_explain,
    "equivalence": cmd_equivalence,
    "recover": cmd_recover,
    "nfl": cmd_nfl,
    "perturb-test": cmd_perturb_test,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="locex",
        description="local surrogate explanations: train, explain, compare")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in HANDLERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="path to the JSON run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default="out",
                       help="output directory (created if absent)")
        p.add_argument("--no-timestamp", action="store_true",
                       help="omit the timestamp for byte-stable reports")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for per-point work")
    args = parser.parse_args(argv)

    try:
        cfg = _load_config(args.config, args.command)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](cfg, args, out)
    except Exception as e:  # runtime failures map to one stderr line
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
