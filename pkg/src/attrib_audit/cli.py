"""Command-line entry point: ``attrib-audit <command> [flags]``.

Exit codes: 0 success, 2 usage or configuration error, 3 an assumption of a
construction does not hold, 4 a verification battery failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import attribution as attr
from . import baselines as bl
from . import experiments, forge, hyptest, querytest, suites
from .errors import AssumptionViolated, ConfigurationError, DegenerateBehaviour, TrainingDiverged
from .models import PiecewiseLinear1D, model_from_dict, model_from_json

EXIT_OK, EXIT_USAGE, EXIT_ASSUMPTION, EXIT_VERIFY = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _read_json_file(path, what: str, parse):
    try:
        return parse(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {what} file {path}: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"malformed {what} file {path}: {exc}") from exc


def _settings(args) -> attr.MethodSettings:
    return attr.MethodSettings(
        ig_steps=args.ig_steps, shap_baseline_samples=args.shap_baseline_samples,
        shap_subset_samples=args.shap_subset_samples, smoothgrad_sigma=args.smoothgrad_sigma,
        smoothgrad_samples=args.smoothgrad_samples, lime_lambda=args.lime_lambda,
        lime_sigma=args.lime_sigma, lime_samples=args.lime_samples, rng_seed=args.seed)


def _write_run_json(out: Path, args, resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"version": __version__, "command": args.command,
           "argv": list(getattr(args, "_argv", [])),
           "args": {k: v for k, v in vars(args).items() if not k.startswith("_") and k != "func"},
           "resolved": resolved}
    (out / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))


def _rows_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _parse_g_spec(spec: str, x, j: int, delta: float) -> forge.LocalBehaviour:
    """``linear:SLOPE[:VALUE]``, ``constant:VALUE``, ``pwl:B,..:V,..:LEFT:RIGHT`` or a JSON file."""
    kind, _, rest = spec.partition(":")
    parts = rest.split(":") if rest else []
    try:
        if kind == "linear" and len(parts) in (1, 2):
            return forge.LocalBehaviour.linear(x, j, delta, float(parts[0]),
                                               float(parts[1]) if len(parts) == 2 else 0.0)
        if kind == "constant" and len(parts) == 1:
            return forge.LocalBehaviour.constant(x, j, delta, float(parts[0]))
        if kind == "pwl" and len(parts) == 4:
            g = PiecewiseLinear1D(tuple(_floats(parts[0])), tuple(_floats(parts[1])),
                                  float(parts[2]), float(parts[3]))
            return forge.LocalBehaviour(g, x, j, delta)
        if Path(spec).is_file():
            g = _read_json_file(spec, "behaviour", lambda t: model_from_dict(json.loads(t)))
            if not isinstance(g, PiecewiseLinear1D):
                raise UsageError("a behaviour file must hold a pwl1d model")
            return forge.LocalBehaviour(g, x, j, delta)
    except (ValueError, IndexError, TypeError) as exc:
        if isinstance(exc, DegenerateBehaviour):
            raise
        raise UsageError(f"bad behaviour spec {spec!r}: {exc}") from exc
    raise UsageError(f"bad behaviour spec {spec!r}; use linear:S[:V], constant:V, "
                     "pwl:B1,..:V1,..:LEFT:RIGHT or a JSON file")


# ---------------------------------------------------------------- commands


def cmd_attribute(args, out: Path) -> int:
    model = _read_json_file(args.model, "model", model_from_json)
    x = _floats(args.x)
    if len(x) != getattr(model, "n_inputs", len(x)):
        raise UsageError(f"x has {len(x)} values, the model expects {model.n_inputs}")
    method = attr._ALIASES.get(args.method, args.method)
    baseline = None
    if args.baseline:
        baseline = _read_json_file(args.baseline, "baseline", bl.baseline_from_json)
    elif method in ("shap_exact", "shap_sampled", "integrated_gradients", "ig_piecewise"):
        raise UsageError(f"method {args.method!r} needs --baseline")
    settings = _settings(args)
    _write_run_json(out, args, {"settings": asdict(settings), "method": method})
    try:
        result = attr.attribute(method, model, baseline, x, settings)
    except (ValueError, IndexError) as exc:
        raise UsageError(str(exc)) from exc
    text = result.to_json() if args.format == "json" else result.to_csv()
    (out / f"attribution.{args.format}").write_text(text)
    print(text, end="" if text.endswith("\n") else "\n")
    return EXIT_OK


def cmd_forge(args, out: Path) -> int:
    x = _floats(args.x)
    baseline = _read_json_file(args.baseline, "baseline", bl.baseline_from_json)
    domain = None
    if args.domain:
        lo, hi = _floats(args.domain)
        domain = [(-math.inf, math.inf)] * len(x)
        domain[args.j] = (lo, hi)
    specs = args.g_spec
    if args.pair and len(specs) != 2:
        raise UsageError("--pair needs exactly two --g-spec values")
    if not args.pair and len(specs) != 1:
        raise UsageError("give one --g-spec (or two with --pair)")
    behaviours = [_parse_g_spec(s, x, args.j, args.delta) for s in specs]
    _write_run_json(out, args, {"baseline": bl.baseline_to_dict(baseline), "domain": domain})
    forged = [forge.forge_counterexample(b, baseline, args.phi, domain) for b in behaviours]
    summary = []
    for i, fm in enumerate(forged):
        name = f"forged_{i}.json" if args.pair else "forged.json"
        (out / name).write_text(fm.to_json())
        nb = hyptest.Neighbourhood(x, args.j, args.delta, 1.0)
        summary.append({"file": name, **fm.provenance(),
                        "recourse_ground_truth": hyptest.recourse_ground_truth(fm.model, nb)})
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_roc_sweep(args, out: Path) -> int:
    exp, train, ds_doc = (experiments.ExperimentConfig(), experiments.TrainConfig(), {})
    if args.config:
        exp, train, ds_doc = experiments.load_config(args.config)
    overrides = {k: getattr(args, k) for k in ("n_models", "n_examples", "n_thresholds",
                                                "neighbourhood_fraction") if getattr(args, k) is not None}
    if args.methods:
        overrides["methods"] = tuple(args.methods.split(","))
    if args.tasks:
        overrides["end_tasks"] = tuple(args.tasks.split(","))
    if args.forged:
        overrides["forged"] = True
    exp = replace(exp, seed=args.seed, **overrides)
    if args.epochs is not None:
        train = replace(train, epochs=args.epochs)
    csv_path = args.csv or ds_doc.get("csv")
    if csv_path:
        schema = {"targets": args.target.split(",") if args.target else ds_doc.get("targets"),
                  "categorical": args.categorical.split(",") if args.categorical else ds_doc.get("categorical", []),
                  "task": args.task or ds_doc.get("task", "regression")}
        try:
            dataset = experiments.ingest_csv(csv_path, schema)
        except OSError as exc:
            raise UsageError(str(exc)) from exc
    else:
        dataset = experiments.bundled_dataset(args.dataset or ds_doc.get("name", "synthetic_additive"),
                                              seed=args.seed)
    _write_run_json(out, args, {"experiment": exp.to_dict(), "train": asdict(train),
                                "dataset": dataset.name, "jobs": args.jobs})
    result = experiments.run_sweep(dataset, exp, train, jobs=args.jobs)
    written = result.write(out, plot_format=args.plot_format)
    if args.format == "json":
        for (m, t), curves in result.curves.items():
            doc = [{"model_index": i, "threshold": c.thresholds.tolist(), "fpr": c.fpr.tolist(),
                    "tpr": c.tpr.tolist()} for i, c in enumerate(curves)]
            path = out / f"{result.dataset}_{m}_{t}.json"
            path.write_text(json.dumps(doc, indent=2))
            written.append(path)
    for path in written:
        print(path)
    return EXIT_OK


def _plan_from_args(args) -> querytest.QueryPlan:
    if args.preset == "sec5":
        return replace(querytest.SEC5_PRESET, rng_seed=args.seed)
    missing = [f for f in ("delta", "p", "n", "epsilon") if getattr(args, f) is None]
    if missing:
        raise UsageError(f"missing plan flags: {', '.join('--' + m for m in missing)}")
    return querytest.QueryPlan(args.delta, args.p, args.n, args.tau, args.epsilon, args.L, args.seed)


def cmd_query_test(args, out: Path) -> int:
    plan = _plan_from_args(args)
    if args.trials < 0:
        raise UsageError("--trials must be non-negative")
    _write_run_json(out, args, {"plan": plan.to_dict(), "trials": args.trials})
    rows = querytest.rates_table([plan], args.trials)
    if args.adversary:
        if args.trials == 0:
            raise UsageError("--adversary needs --trials > 0")
        rate, bound, se = querytest.adversary_detection(plan, args.trials)
        rows[0].update(adversary_detection=rate, adversary_bound=bound,
                       adversary_pass=rate <= bound + 4 * se)
    if args.format == "json":
        text = json.dumps(rows, indent=2, default=str)
    else:
        cols = querytest.RATE_COLUMNS + [c for c in rows[0] if c not in querytest.RATE_COLUMNS]
        text = _rows_csv(cols, [[r[c] for c in cols] for r in rows])
    (out / f"query_rates.{args.format}").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_prop4(args, out: Path) -> int:
    baseline = (_read_json_file(args.baseline, "baseline", bl.baseline_from_json) if args.baseline
                else bl.UniformBox([args.lo], [args.hi]))
    _write_run_json(out, args, {"baseline": bl.baseline_to_dict(baseline)})
    est = forge.random_polynomial_mc(args.n_degree, baseline, args.samples, args.seed)
    exact = forge.polynomial_disagreement_exact(args.n_degree, baseline)
    se = math.sqrt(est * (1 - est) / args.samples)
    row = {"n_degree": args.n_degree, "samples": args.samples, "estimate": est,
           "standard_error": se, "exact": exact}
    if args.format == "json":
        text = json.dumps(row, indent=2)
    else:
        text = _rows_csv(list(row), [list(row.values())])
    (out / f"prop4.{args.format}").write_text(text)
    print(text, end="" if text.endswith("\n") else "\n")
    return EXIT_OK


def cmd_verify(args, out: Path) -> int:
    _write_run_json(out, args, {"suite": args.suite})
    checks = suites.run_suite(args.suite, args.seed)
    rows = [[c.name, "PASS" if c.passed else "FAIL", c.detail] for c in checks]
    if args.format == "json":
        text = json.dumps([dict(zip(("check", "status", "detail"), r)) for r in rows], indent=2)
    else:
        text = _rows_csv(["check", "status", "detail"], rows)
    (out / f"verify_{args.suite}.{args.format}").write_text(text)
    for name, status, detail in rows:
        print(f"{status}  {name}  {detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


# ---------------------------------------------------------------- parser


def _add_globals(parser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(0), help="master random seed (default 0)")
    parser.add_argument("--out", default=d("out"), help="output directory (default ./out)")
    parser.add_argument("--config", default=d(None), help="JSON configuration file")
    parser.add_argument("--format", choices=("csv", "json"), default=d("csv"), help="output format")
    parser.add_argument("--jobs", type=int, default=d(os.cpu_count() or 1),
                        help="worker processes (default: available cores)")


def _add_settings(parser) -> None:
    s = attr.MethodSettings()
    g = parser.add_argument_group("method settings")
    g.add_argument("--ig-steps", type=int, default=s.ig_steps)
    g.add_argument("--shap-baseline-samples", type=int, default=s.shap_baseline_samples)
    g.add_argument("--shap-subset-samples", type=int, default=s.shap_subset_samples)
    g.add_argument("--smoothgrad-sigma", type=float, default=s.smoothgrad_sigma)
    g.add_argument("--smoothgrad-samples", type=int, default=s.smoothgrad_samples)
    g.add_argument("--lime-lambda", type=float, default=s.lime_lambda)
    g.add_argument("--lime-sigma", type=float, default=s.lime_sigma)
    g.add_argument("--lime-samples", type=int, default=s.lime_samples)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attrib-audit",
                                     description="Audit feature attributions as hypothesis tests.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_globals(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_globals(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attribute", parents=[common], help="attribute one example")
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--baseline", help="baseline JSON file")
    p.add_argument("--x", required=True, help="comma-separated example")
    p.add_argument("--method", default="shap", choices=sorted({*attr.METHODS, *attr._ALIASES}))
    _add_settings(p)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("forge", parents=[common], help="forge a counterexample model")
    p.add_argument("--g-spec", action="append", required=True,
                   help="local behaviour: linear:S[:V], constant:V, pwl:B..:V..:L:R or JSON file")
    p.add_argument("--x", required=True)
    p.add_argument("--j", type=int, default=0)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--phi", type=float, default=0.0, help="target attribution")
    p.add_argument("--baseline", required=True)
    p.add_argument("--domain", help="lo,hi of feature j (default: the real line)")
    p.add_argument("--pair", action="store_true", help="forge two behaviours to the same phi")
    p.set_defaults(func=cmd_forge)

    p = sub.add_parser("roc-sweep", parents=[common], help="ROC sweep over trained models")
    p.add_argument("--dataset", help=f"bundled dataset: {', '.join(experiments.BUNDLED)}")
    p.add_argument("--csv", help="local CSV file instead of a bundled dataset")
    p.add_argument("--target", help="target column(s), comma-separated")
    p.add_argument("--categorical", help="categorical columns, comma-separated")
    p.add_argument("--task", choices=("regression", "classification"))
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(experiments.ALL_METHODS)}")
    p.add_argument("--tasks", help="comma-separated end tasks (recourse,spurious)")
    p.add_argument("--n-models", type=int)
    p.add_argument("--n-examples", type=int)
    p.add_argument("--n-thresholds", type=int)
    p.add_argument("--neighbourhood-fraction", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--forged", action="store_true", help="replace trained models by forged pairs")
    p.add_argument("--plot-format", default="svg", choices=("svg", "pdf", "png"))
    p.set_defaults(func=cmd_roc_sweep)

    p = sub.add_parser("query-test", parents=[common], help="brute-force query test rates")
    p.add_argument("--preset", choices=("sec5",))
    p.add_argument("--delta", type=float)
    p.add_argument("--p", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=1000, help="0 gives closed-form rates only")
    p.add_argument("--adversary", action="store_true", help="also run the cell-bump bound check")
    p.set_defaults(func=cmd_query_test)

    p = sub.add_parser("prop4", parents=[common], help="random polynomial sign disagreement")
    p.add_argument("--n-degree", type=int, default=2)
    p.add_argument("--lo", type=float, default=-1.5)
    p.add_argument("--hi", type=float, default=1.5)
    p.add_argument("--baseline", help="1-D baseline JSON (overrides --lo/--hi)")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.set_defaults(func=cmd_prop4)

    p = sub.add_parser("verify", parents=[common], help="run invariant batteries")
    p.add_argument("suite", choices=[*suites.SUITES, "all"])
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._argv = argv
    try:
        return args.func(args, Path(args.out))
    except AssumptionViolated as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (UsageError, ConfigurationError, DegenerateBehaviour, TrainingDiverged, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
