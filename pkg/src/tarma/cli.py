"""Command-line interface.

Subcommands: simulate | contaminate | fit | forecast | montecarlo |
biascurve | outliers | select-alpha | report | replay.

Conventions
-----------
* Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
* Human-readable summaries go to standard output; machine artifacts are
  only ever written to files inside ``--out-dir``.
* Every run writes a ``<subcommand>_manifest.json`` with the fully
  resolved configuration, the master seed, input digests and output
  names; ``replay`` re-runs a manifest and reproduces the outputs
  byte-for-byte.
* Commands that draw randomness (simulate, contaminate, montecarlo,
  biascurve) require an explicit ``--seed``; there is no wall-clock
  seeding.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidInputError, NumericFailureError
from .estimation import (FitConfig, FitResult, ThresholdGrid,
                         profile_search, robust_outlier_weights)
from .evaluation import (McConfig, asymptotic_bias_curve, forecast_horizon,
                         forecast_recursive, mape, run_mc_experiment,
                         select_alpha)
from .model import (ContaminationSpec, InnovationSpec, TarmaParams,
                    contaminate, simulate)
from .series import TimeSeries, load_csv

_MANIFEST_SUFFIX = "_manifest.json"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InvalidInputError(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"malformed JSON in {path}: {exc}") from exc


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else
                             (repr(float(v)) if isinstance(v, (float, np.floating))
                              else v) for v in row])


def _write_manifest(out_dir: Path, subcommand: str, spec: dict,
                    inputs: list, outputs: list[str]) -> Path:
    manifest = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "master_seed": spec.get("seed"),
        "resolved_config": spec,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": outputs,
    }
    path = out_dir / f"{subcommand}{_MANIFEST_SUFFIX}"
    _write_json(path, manifest)
    return path


def _load_series(spec: dict, key_path: str = "data", key_col: str = "column"):
    path = spec[key_path]
    if str(path).endswith(".json"):
        # TimeSeries JSON interchange: {"values": [...], "timestamps": [...]}
        try:
            return TimeSeries.from_json(Path(path).read_text())
        except OSError as exc:
            raise InvalidInputError(f"cannot open {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"malformed JSON in {path}: {exc}") from exc
    return load_csv(path, spec[key_col])


def _fit_config_from_spec(spec: dict) -> FitConfig:
    cfg_dict = spec.get("config") or {}
    if "loss" not in cfg_dict:
        print("warning: alpha omitted; defaulting to 0 (least squares)")
        cfg_dict = dict(cfg_dict, loss={"family": "power_divergence", "alpha": 0.0})
    return FitConfig.from_dict(cfg_dict)


# ---------------------------------------------------------------------------
# subcommand implementations: resolve(args) -> spec, run(spec, out_dir)


def _resolve_simulate(args) -> dict:
    params = TarmaParams.from_dict(_read_json(args.params))
    innov = {"kind": "gaussian", "sigma2": args.sigma2}
    if args.innovations:
        innov = _read_json(args.innovations)
    return {
        "params": params.to_dict(),
        "params_file": str(args.params),
        "n": args.n,
        "burn_in": args.burn_in,
        "innovations": innov,
        "seed": args.seed,
    }


def _run_simulate(spec: dict, out_dir: Path) -> list[str]:
    params = TarmaParams.from_dict(spec["params"])
    if spec["n"] < 1:
        raise InvalidInputError("n must be >= 1")
    innov = InnovationSpec.from_dict(spec["innovations"])
    series = simulate(params, spec["n"], innov, burn_in=spec["burn_in"],
                      rng=np.random.default_rng(spec["seed"]))
    _write_csv(out_dir / "series.csv", ["t", "x"],
               ((t, float(v)) for t, v in enumerate(series.values)))
    print(f"simulated {len(series)} points -> {out_dir / 'series.csv'}")
    return ["series.csv"]


def _resolve_contaminate(args) -> dict:
    return {
        "data": str(args.data),
        "column": args.column,
        "spec": ContaminationSpec.from_dict(_read_json(args.spec)).to_dict(),
        "seed": args.seed,
    }


def _run_contaminate(spec: dict, out_dir: Path) -> list[str]:
    series = _load_series(spec)
    cspec = ContaminationSpec.from_dict(spec["spec"])
    dirty, idx = contaminate(series, cspec, spec["seed"])
    _write_csv(out_dir / "contaminated.csv", ["t", "x"],
               ((t, float(v)) for t, v in enumerate(dirty.values)))
    _write_csv(out_dir / "outlier_indices.csv", ["t"], ((int(i),) for i in idx))
    print(f"contaminated {idx.size} of {len(series)} points")
    return ["contaminated.csv", "outlier_indices.csv"]


def _resolve_fit(args) -> dict:
    return {
        "data": str(args.data),
        "column": args.column,
        "config": _read_json(args.config) if args.config else {},
        "jobs": args.jobs or 1,
        "seed": None,
    }


def _coef_names(p: int, q: int) -> list[str]:
    names = [f"phi1_{i}" for i in range(p + 1)]
    names += [f"phi2_{i}" for i in range(p + 1)]
    names += [f"theta1_{j}" for j in range(1, q + 1)]
    names += [f"theta2_{j}" for j in range(1, q + 1)]
    return names


def _print_fit_summary(fit: FitResult) -> None:
    names = _coef_names(fit.params.p, fit.params.q)
    est = [f"{v: .3f}" for v in fit.params.lam]
    ses = (["   n/a "] * len(names) if fit.std_errors is None
           else [f"({v:.3f})" for v in fit.std_errors])
    width = max(len(n) for n in names) + 2
    print("".join(n.rjust(width) for n in names))
    print("".join(e.rjust(width) for e in est))
    print("".join(s.rjust(width) for s in ses))
    alpha = fit.loss.alpha if fit.loss.family == "power_divergence" else None
    print(f"r = {fit.params.r:.6g}  d = {fit.params.d}  "
          f"sigma = {fit.sigma_hat:.6g}"
          + (f"  alpha = {alpha:g}" if alpha is not None else "")
          + f"  objective = {fit.objective:.6g}")
    if fit.covariance_message:
        print(f"note: {fit.covariance_message}")


def _run_fit(spec: dict, out_dir: Path) -> list[str]:
    series = _load_series(spec)
    config = _fit_config_from_spec(spec)
    fit = profile_search(series, config, jobs=spec.get("jobs", 1))
    _write_json(out_dir / "fit.json", fit.to_dict())
    _print_fit_summary(fit)
    return ["fit.json"]


def _resolve_forecast(args) -> dict:
    return {
        "data": str(args.data),
        "column": args.column,
        "fit": str(args.fit),
        "horizon": args.horizon,
        "actuals": str(args.actuals) if args.actuals else None,
        "actuals_column": args.column,
        "seed": None,
    }


def _run_forecast(spec: dict, out_dir: Path) -> list[str]:
    if spec["horizon"] < 1:
        raise InvalidInputError("horizon must be >= 1")
    series = _load_series(spec)
    fit = FitResult.from_dict(_read_json(spec["fit"]))
    horizon = spec["horizon"]
    value = None
    if spec["actuals"]:
        actuals = load_csv(spec["actuals"], spec["actuals_column"])
        if len(actuals) < horizon:
            raise InvalidInputError(
                f"actuals file has {len(actuals)} rows, need {horizon}"
            )
        test = TimeSeries(actuals.values[:horizon])
        preds = forecast_horizon(series, test, fit)
        value = mape(test.values, preds)
        rows = [(h + 1, float(p), float(a))
                for h, (p, a) in enumerate(zip(preds, test.values))]
        header = ["step", "forecast", "actual"]
    else:
        preds = forecast_recursive(series, fit.params, horizon)
        rows = [(h + 1, float(p)) for h, p in enumerate(preds)]
        header = ["step", "forecast"]
    _write_csv(out_dir / "forecasts.csv", header, rows)
    _write_json(out_dir / "forecast_summary.json",
                {"horizon": horizon, "mape": value,
                 "mape_sum": None if value is None else value * horizon})
    print(f"forecast horizon {horizon}; MAPE = "
          + (f"{value:.4g}" if value is not None else "n/a (no actuals)"))
    return ["forecasts.csv", "forecast_summary.json"]


def _resolve_montecarlo(args) -> dict:
    cfg = _read_json(args.config)
    cfg["master_seed"] = args.seed
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    McConfig.from_dict(cfg)  # validate early
    return {"mc": cfg, "seed": args.seed}


_MC_METRICS = ("sq_bias", "sq_var", "sq_bias_lambda", "sq_var_lambda",
               "n_converged", "n_failed")


def _run_montecarlo(spec: dict, out_dir: Path) -> list[str]:
    config = McConfig.from_dict(spec["mc"])
    report = run_mc_experiment(config)
    long_rows = []
    for row in report.rows:
        for metric in _MC_METRICS:
            long_rows.append((row["case"], row["kind"], row["alpha"], row["n"],
                              row["epsilon"], row["k"], metric, row[metric]))
    _write_csv(out_dir / "mc_report.csv",
               ["case", "kind", "alpha", "n", "epsilon", "k", "metric", "value"],
               long_rows)
    _write_json(out_dir / "mc_report.json",
                {"rows": report.rows, "metadata": report.metadata})
    failures = sum(r["n_failed"] for r in report.rows)
    print(f"monte carlo done: {len(report.rows)} (alpha, n) cells, "
          f"{failures} failed fits")
    return ["mc_report.csv", "mc_report.json"]


def _resolve_biascurve(args) -> dict:
    cfg = _read_json(args.config)
    cfg["master_seed"] = args.seed
    return {"biascurve": cfg, "seed": args.seed}


def _run_biascurve(spec: dict, out_dir: Path) -> list[str]:
    cfg = spec["biascurve"]
    case = cfg.get("case", 1)
    params = (TarmaParams.from_dict(case) if isinstance(case, dict)
              else None)
    from .evaluation import BENCHMARK_CASES, _mc_fit_config
    if params is None:
        if int(case) not in BENCHMARK_CASES:
            raise InvalidInputError(f"unknown case id {case}")
        params = BENCHMARK_CASES[int(case)]
    fit_cfg = (FitConfig.from_dict(cfg["fit"]) if "fit" in cfg
               else _mc_fit_config())
    rows = asymptotic_bias_curve(
        params, cfg.get("kind", "AO"), cfg["epsilons"], cfg["ks"],
        cfg["alphas"], int(cfg["n_large"]), int(cfg["master_seed"]),
        fit=fit_cfg, burn_in=int(cfg.get("burn_in", 500)),
    )
    long_rows = []
    for row in rows:
        for metric in ("B", "B_lambda", "converged"):
            value = row.get(metric)
            if metric == "converged":
                value = int(bool(value))
            long_rows.append((case if not isinstance(case, dict) else "custom",
                              row["kind"], row["alpha"], row["n"],
                              row["epsilon"], row["k"], metric, value))
    _write_csv(out_dir / "bias_curves.csv",
               ["case", "kind", "alpha", "n", "epsilon", "k", "metric", "value"],
               long_rows)
    _write_json(out_dir / "bias_curves.json", {"rows": rows, "config": cfg})
    n_failed = sum(1 for r in rows if r.get("B") is None)
    print(f"bias curves done: {len(rows)} cells, {n_failed} failed")
    return ["bias_curves.csv", "bias_curves.json"]


def _resolve_outliers(args) -> dict:
    return {
        "data": str(args.data),
        "column": args.column,
        "fit": str(args.fit),
        "top_m": args.top_m,
        "seed": None,
    }


def _run_outliers(spec: dict, out_dir: Path) -> list[str]:
    series = _load_series(spec)
    fit = FitResult.from_dict(_read_json(spec["fit"]))
    w, flagged = robust_outlier_weights(fit, spec["top_m"])
    t_idx = fit.time_index()
    order = np.argsort(w, kind="stable")
    pos = {int(t): i for i, t in enumerate(t_idx)}
    rows = []
    for i in order[:spec["top_m"]]:
        t = int(t_idx[i])
        rows.append((t, float(series.values[t]), float(fit.residuals[pos[t]]),
                     float(w[i])))
    rows.sort(key=lambda r: r[3])
    _write_csv(out_dir / "outliers.csv",
               ["t", "x_t", "residual", "weight"], rows)
    print(f"flagged {len(rows)} outliers (smallest robust weights)")
    return ["outliers.csv"]


def _resolve_select_alpha(args) -> dict:
    alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    if not alphas:
        raise InvalidInputError("empty alpha grid")
    return {
        "train": str(args.train),
        "test": str(args.test),
        "column": args.column,
        "alphas": alphas,
        "config": _read_json(args.config) if args.config else None,
        "seed": None,
    }


def _run_select_alpha(spec: dict, out_dir: Path) -> list[str]:
    train = load_csv(spec["train"], spec["column"])
    test = load_csv(spec["test"], spec["column"])
    if spec["config"] is not None:
        config = FitConfig.from_dict(spec["config"])
    else:
        # applied-workflow default: threshold pinned at zero, delay one
        config = FitConfig(threshold_grid=ThresholdGrid.fixed(0.0),
                           delay_set=(1,))
    alpha_star, table = select_alpha(train, test, spec["alphas"], config)
    _write_json(out_dir / "alpha_selection.json",
                {"alpha_star": alpha_star, "table": table})
    _write_csv(out_dir / "alpha_table.csv",
               ["alpha", "mape", "mape_sum", "objective"],
               ((r["alpha"], r.get("mape"), r.get("mape_sum"),
                 r.get("objective")) for r in table))
    print(f"selected alpha = {alpha_star}")
    return ["alpha_selection.json", "alpha_table.csv"]


def _resolve_report(args) -> dict:
    return {
        "kind": args.kind,
        "input": str(args.input),
        "data": str(args.data) if args.data else None,
        "column": args.column,
        "top_m": args.top_m,
        "seed": None,
    }


def _run_report(spec: dict, out_dir: Path) -> list[str]:
    from .report import plot_bias_curves, plot_fit_diagnostics, plot_mc_report

    payload = _read_json(spec["input"])
    if spec["kind"] == "mc":
        written = plot_mc_report(payload["rows"], out_dir)
    elif spec["kind"] == "biascurve":
        written = plot_bias_curves(payload["rows"], out_dir)
    elif spec["kind"] == "fit":
        if not spec["data"]:
            raise InvalidInputError("report --kind fit needs --data")
        series = load_csv(spec["data"], spec["column"])
        written = plot_fit_diagnostics(series.values, payload, out_dir,
                                       top_m=spec["top_m"])
    else:
        raise InvalidInputError(f"unknown report kind {spec['kind']!r}")
    for p in written:
        print(f"wrote {p}")
    return [p.name for p in written]


_COMMANDS = {
    "simulate": (_resolve_simulate, _run_simulate),
    "contaminate": (_resolve_contaminate, _run_contaminate),
    "fit": (_resolve_fit, _run_fit),
    "forecast": (_resolve_forecast, _run_forecast),
    "montecarlo": (_resolve_montecarlo, _run_montecarlo),
    "biascurve": (_resolve_biascurve, _run_biascurve),
    "outliers": (_resolve_outliers, _run_outliers),
    "select-alpha": (_resolve_select_alpha, _run_select_alpha),
    "report": (_resolve_report, _run_report),
}


def _input_files(spec: dict) -> list[str]:
    keys = ("data", "train", "test", "fit", "actuals", "input", "params_file")
    return [spec[k] for k in keys if spec.get(k)]


def _dispatch(name: str, spec: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = _COMMANDS[name][1](spec, out_dir)
    _write_manifest(out_dir, name, spec, _input_files(spec), outputs)


def _run_replay(args) -> None:
    manifest = _read_json(args.manifest)
    name = manifest.get("subcommand")
    if name not in _COMMANDS:
        raise InvalidInputError(f"manifest names unknown subcommand {name!r}")
    _dispatch(name, manifest["resolved_config"], Path(args.out_dir))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tarma",
        description="Robust estimation toolkit for two-regime TARMA models",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, seed_required=False):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--out-dir", default=".", help="output directory")
        if seed_required:
            sp.add_argument("--seed", type=int, required=True,
                            help="master seed (required; no wall-clock seeding)")
        return sp

    sp = add("simulate", "simulate a TARMA path", seed_required=True)
    sp.add_argument("--params", required=True, help="TarmaParams JSON file")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--burn-in", type=int, default=500)
    sp.add_argument("--sigma2", type=float, default=1.0)
    sp.add_argument("--innovations", help="InnovationSpec JSON file")

    sp = add("contaminate", "apply AO/RO outliers to a series",
             seed_required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--column", default="x")
    sp.add_argument("--spec", required=True, help="ContaminationSpec JSON file")

    sp = add("fit", "robust profile fit")
    sp.add_argument("--data", required=True)
    sp.add_argument("--column", default="x")
    sp.add_argument("--config", help="FitConfig JSON file")
    sp.add_argument("--jobs", type=int, help="parallel workers across delays")

    sp = add("forecast", "one-step-ahead or iterated forecasts")
    sp.add_argument("--data", required=True, help="history CSV")
    sp.add_argument("--column", default="x")
    sp.add_argument("--fit", required=True, help="fit.json from the fit command")
    sp.add_argument("--horizon", type=int, required=True)
    sp.add_argument("--actuals", help="CSV of realized test values")

    sp = add("montecarlo", "bias/variance experiment", seed_required=True)
    sp.add_argument("--config", required=True, help="McConfig JSON file")
    sp.add_argument("--jobs", type=int, help="parallel workers")

    sp = add("biascurve", "large-sample bias sweep", seed_required=True)
    sp.add_argument("--config", required=True)

    sp = add("outliers", "rank observations by robust weight")
    sp.add_argument("--data", required=True)
    sp.add_argument("--column", default="x")
    sp.add_argument("--fit", required=True)
    sp.add_argument("--top-m", type=int, required=True)

    sp = add("select-alpha", "choose the tuning constant by test MAPE")
    sp.add_argument("--train", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--column", default="x")
    sp.add_argument("--alphas", required=True, help="comma-separated grid")
    sp.add_argument("--config", help="base FitConfig JSON file")

    sp = add("report", "render figures from harness outputs")
    sp.add_argument("--kind", required=True, choices=["mc", "biascurve", "fit"])
    sp.add_argument("--input", required=True, help="JSON produced by a command")
    sp.add_argument("--data", help="series CSV (for --kind fit)")
    sp.add_argument("--column", default="x")
    sp.add_argument("--top-m", type=int)

    sp = sub.add_parser("replay", help="re-run a manifest byte-for-byte")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out-dir", default=".")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if args.command == "replay":
                _run_replay(args)
            else:
                resolve, _ = _COMMANDS[args.command]
                spec = resolve(args)
                _dispatch(args.command, spec, Path(args.out_dir))
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
