"""Command-line entry point: ``nngpbench <command> [options]``.

Commands
--------
synth           write a synthetic dataset (CSV plus schema YAML)
variogram       OLS residual variogram, IRWGLS fits and family selection
fit             fit one model and save it to a container file
predict         load a container and predict rows of a CSV
benchmark       split, fit and score several models over sample sizes
neighbor-curve  cross-validated MSE of the NNGP model against k

Exit codes: 0 success, 1 model failure, 2 input or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml
from scipy.stats import norm

from . import covmodel, gp_exact, linreg, metrics, mlp, nngp, synth, tuner
from .dataset import (
    DataError,
    SpatialDataset,
    dump_schema,
    load_csv,
    load_schema,
    random_split,
    schema_from_dict,
    schema_to_dict,
    write_csv,
)

EXIT_OK = 0
EXIT_MODEL = 1
EXIT_INPUT = 2

MODELS = ("ols", "gp-exact", "nngp", "dnn")
DEFAULT_SIZES = (1_000, 10_000, 100_000)
DESK_MAX_SIZE = 100_000
LARGE_MAX_SIZE = 1_000_000


class ConfigError(ValueError):
    pass


class ModelFailure(RuntimeError):
    pass


def _child_seed(root: int, *keys: int) -> int:
    """Independent integer seed derived from the root seed and ``keys``."""
    return int(np.random.SeedSequence([int(root), *map(int, keys)]).generate_state(1)[0])


def _fmt_float(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


# ---------------------------------------------------------------------------
# data sources


def _add_source_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data source (give --data with --schema, or --synth)")
    g.add_argument("--data", help="input CSV file")
    g.add_argument("--schema", help="column schema YAML for --data")
    g.add_argument("--synth", type=int, metavar="N", help="generate N rows from the default synthetic spec")
    g.add_argument("--synth-spec", help="synthetic spec YAML (overrides the default spec)")
    g.add_argument("--missing", choices=("error", "drop"), default="error",
                   help="rows with empty cells: fail (default) or drop them")


def _load_source(args, seed: int, n: int | None = None) -> SpatialDataset:
    has_file = args.data is not None
    has_synth = args.synth is not None or args.synth_spec is not None
    if has_file == has_synth:
        raise ConfigError("give exactly one data source: --data/--schema or --synth/--synth-spec")
    if has_file:
        if args.schema is None:
            raise ConfigError("--data needs --schema")
        return load_csv(args.data, load_schema(args.schema), missing=args.missing)
    spec = synth.SynthSpec.load(args.synth_spec) if args.synth_spec else synth.default_lifull_like()
    size = n if n is not None else (args.synth if args.synth is not None else spec.n)
    ds, _ = synth.generate(spec.with_(n=int(size), seed=int(seed)))
    return ds


# ---------------------------------------------------------------------------
# model containers


@dataclass(frozen=True)
class FittedModel:
    kind: str
    model: object
    schema: tuple = ()
    meta: dict = field(default_factory=dict)

    def predict(self, ds: SpatialDataset, level: float = 0.95, workers: int = 1):
        """(mean, sd, lo, hi); sd and bounds are None for point-only models."""
        if tuple(ds.feature_names) != tuple(self.feature_names):
            raise DataError(
                "feature columns differ from the fitted model: "
                f"expected {list(self.feature_names)}, got {list(ds.feature_names)}"
            )
        if self.kind == "ols":
            return linreg.prediction_interval(self.model, ds.X, level)
        if self.kind == "nngp":
            pred = nngp.predict(self.model, ds.X, ds.coords, workers=workers)
            lo, hi = pred.interval(level)
            return pred.mean, pred.sd, lo, hi
        if self.kind == "gp-exact":
            mean, var = gp_exact.krige(self.model, ds.X, ds.coords)
            sd = np.sqrt(var)
            q = norm.ppf(0.5 + level / 2.0)
            return mean, sd, mean - q * sd, mean + q * sd
        if self.kind == "dnn":
            return mlp.forward(self.model, mlp.model_inputs(ds)), None, None, None
        raise ConfigError(f"unknown model kind {self.kind!r}")

    @property
    def feature_names(self) -> tuple[str, ...]:
        if self.kind == "dnn":
            return tuple(self.meta.get("feature_names", ()))
        return tuple(self.model.feature_names)


def fit_model(kind: str, ds: SpatialDataset, args, seed: int, history_path=None):
    """Fit one model of ``kind`` on ``ds`` with hyperparameters from ``args``."""
    if kind == "ols":
        return linreg.fit(ds)
    if kind == "nngp":
        return nngp.fit_conjugate(
            ds, args.family, args.phi, args.alpha, args.k, workers=args.workers
        )
    if kind == "gp-exact":
        spec = covmodel.CovarianceSpec(args.family, args.sigma2, args.phi, args.alpha * args.sigma2)
        return gp_exact.fit_exact(ds, spec)
    if kind == "dnn":
        space = tuner.mlp_space()
        objective = tuner.cv_objective(ds, folds=args.folds, seed=seed, optimizer=args.optimizer)
        best, _ = tuner.optimize(
            space, objective, n_trials=args.trials, seed=seed, history_path=history_path
        )
        config = tuner.config_from_params(best, optimizer=args.optimizer, seed=seed)
        return tuner.refit_best(ds, config)
    raise ConfigError(f"unknown model {kind!r}")


def save_container(kind: str, model, ds: SpatialDataset, path: Path) -> None:
    extra = {"model": kind, "schema": schema_to_dict(ds.schema)}
    if kind == "nngp":
        nngp.save_posterior(model, path, extra=extra)
    elif kind == "dnn":
        mlp.save_model(model, path, extra={**extra, "feature_names": list(ds.feature_names)})
    elif kind == "ols":
        meta = {**extra, "format": "nngpbench.ols", "version": 1,
                "feature_names": list(model.feature_names), "n": model.n,
                "sigma2_hat": model.sigma2_hat, "r2": model.r2, "adj_r2": model.adj_r2}
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), beta=model.beta,
                     se=model.std_errors, t=model.t_values, xtx_inv=model.xtx_inv)
    elif kind == "gp-exact":
        s = model.spec
        meta = {**extra, "format": "nngpbench.gp_exact", "version": 1,
                "feature_names": list(model.feature_names),
                "spec": {"family": s.family, "sigma2": s.sigma2, "phi": s.phi, "tau2": s.tau2}}
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), X=model.X, y=model.y,
                     coords=model.coords)
    else:
        raise ConfigError(f"unknown model {kind!r}")


def load_container(path: str | Path) -> FittedModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: z[k] for k in z.files if k != "meta"}
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: not a model container ({exc})") from None
    kind = meta.get("model")
    schema = tuple(schema_from_dict(meta["schema"])) if "schema" in meta else ()
    if kind == "nngp":
        model = nngp.load_posterior(path)
    elif kind == "dnn":
        model, _ = mlp.load_model(path)
    elif kind == "ols":
        K = arrays["beta"].size
        n = int(meta["n"])
        model = linreg.OlsFit(
            beta=arrays["beta"], t_values=arrays["t"], std_errors=arrays["se"],
            sigma2_hat=float(meta["sigma2_hat"]), r2=float(meta["r2"]),
            adj_r2=float(meta["adj_r2"]), n=n, K=K, xtx_inv=arrays["xtx_inv"],
            feature_names=tuple(meta["feature_names"]),
        )
    elif kind == "gp-exact":
        spec = covmodel.CovarianceSpec(**meta["spec"])
        ds = SpatialDataset(y=arrays["y"], X=arrays["X"], coords=arrays["coords"],
                            feature_names=tuple(meta["feature_names"]))
        model = gp_exact.fit_exact(ds, spec)
    else:
        raise DataError(f"{path}: unknown model kind {kind!r}")
    return FittedModel(kind, model, schema, meta)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    spec = synth.SynthSpec.load(args.spec) if args.spec else synth.default_lifull_like()
    spec = spec.with_(n=args.n if args.n is not None else spec.n, seed=args.seed)
    ds, _ = synth.generate(spec)
    out = Path(args.out)
    write_csv(ds, out)
    schema_path = Path(args.schema_out) if args.schema_out else out.with_suffix(".schema.yaml")
    dump_schema(ds.schema, schema_path)
    if args.spec_out:
        spec.dump(args.spec_out)
    print(f"wrote {ds.n} rows to {out} (schema {schema_path})")
    return EXIT_OK


def cmd_variogram(args) -> int:
    ds = _load_source(args, args.seed)
    ols = linreg.fit(ds)
    resid = ds.y - ds.X @ ols.beta
    ev = covmodel.empirical_variogram(
        resid, ds.coords, n_bins=args.bins, max_dist=args.max_dist, seed=args.seed
    )
    families = [args.family] if args.family else list(covmodel.FAMILIES)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sel = covmodel.select_family(ev, families, folds=args.folds)
    if args.out:
        ev.to_csv(args.out)
    lines = [f"{'family':<12}{'sigma2':>12}{'phi':>12}{'range':>10}{'tau2':>12}{'alpha':>10}{'cv':>12}"]
    for fam in families:
        s = sel.fits[fam].spec
        score = sel.scores.get(fam, math.nan)
        lines.append(
            f"{fam:<12}{s.sigma2:>12.5g}{s.phi:>12.5g}{s.range:>10.4g}{s.tau2:>12.5g}"
            f"{s.alpha:>10.4g}{score:>12.4g}"
        )
    s = sel.spec
    lines.append(
        f"selected: family={s.family} sigma2={s.sigma2:.6g} phi={s.phi:.6g} "
        f"tau2={s.tau2:.6g} alpha={s.alpha:.6g}"
    )
    for w in caught:
        lines.append(f"warning: {w.message}")
    print("\n".join(lines))
    if args.spec_out:
        with open(args.spec_out, "w", encoding="utf-8") as fh:
            yaml.safe_dump({"family": s.family, "sigma2": s.sigma2, "phi": s.phi,
                            "tau2": s.tau2}, fh, sort_keys=False)
    return EXIT_OK


def cmd_fit(args) -> int:
    ds = _load_source(args, args.seed)
    history = Path(args.out).with_suffix(".trials.csv") if args.model == "dnn" else None
    model = fit_model(args.model, ds, args, args.seed, history_path=history)
    save_container(args.model, model, ds, Path(args.out))
    if args.model == "ols":
        print(linreg.coefficient_table(model), end="")
    elif args.model == "nngp":
        print(f"nngp: n={model.n} k={model.k} family={model.family} phi={model.phi:.6g} "
              f"alpha={model.alpha:.6g} sigma2_mean={model.sigma2_mean:.6g}")
    elif args.model == "dnn":
        print(f"dnn: {json.dumps(model.config.to_dict())}")
    print(f"saved {args.model} model to {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    fm = load_container(args.model_file)
    schema = load_schema(args.schema) if args.schema else list(fm.schema)
    if not schema:
        raise ConfigError("model file has no schema; pass --schema")
    ds = load_csv(args.data, schema, require_response=False, missing=args.missing)
    mean, sd, lo, hi = fm.predict(ds, level=args.level, workers=args.workers)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["id", "mean", "sd", "lo", "hi"])
        for i in range(ds.n):
            w.writerow([i, _fmt_float(mean[i])] + [
                "" if arr is None else _fmt_float(arr[i]) for arr in (sd, lo, hi)
            ])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _parse_sizes(text: str) -> list[int]:
    try:
        sizes = [int(float(s)) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad size list {text!r}") from None
    if not sizes or any(s < 10 for s in sizes):
        raise ConfigError("sizes must be integers >= 10")
    return sizes


def _parse_models(text: str) -> list[str]:
    models = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in models if m not in MODELS]
    if bad or not models:
        raise ConfigError(f"unknown model(s) {bad}; choose from {', '.join(MODELS)}")
    return list(dict.fromkeys(models))


def cmd_benchmark(args) -> int:
    sizes = _parse_sizes(args.sizes)
    models = _parse_models(args.models)
    cap = LARGE_MAX_SIZE if args.large else DESK_MAX_SIZE
    too_big = [s for s in sizes if s > cap]
    if too_big:
        raise ConfigError(f"sizes {too_big} exceed {cap}" + ("" if args.large else "; pass --large"))
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    pool = None
    if args.data is not None:
        pool = _load_source(args, args.seed)

    metric_rows: dict[str, dict[str, metrics.MetricReport | None]] = {}
    ranges: dict[str, dict[str, metrics.RangeBreakdown]] = {}
    hists: dict[str, dict[str, metrics.ErrorRateHistogram]] = {}
    timings: list[str] = []
    failures: list[str] = []
    for si, size in enumerate(sizes):
        data_seed = _child_seed(args.seed, si, 0)
        if pool is not None:
            if size > pool.n:
                raise ConfigError(f"size {size} exceeds the {pool.n} rows in {args.data}")
            rng = np.random.default_rng(data_seed)
            ds = pool.subset(np.sort(rng.choice(pool.n, size=size, replace=False)))
        else:
            ds = _load_source(args, data_seed, n=size)
        split = random_split(ds.n, args.train_fraction, _child_seed(args.seed, si, 1))
        train, test = ds.subset(split.train), ds.subset(split.test)
        label = str(size)
        metric_rows[label], ranges[label], hists[label] = {}, {}, {}
        for mi, kind in enumerate(models):
            if size > DESK_MAX_SIZE and kind in ("dnn", "gp-exact"):
                metric_rows[label][kind] = None
                failures.append(f"{label}/{kind}: skipped above {DESK_MAX_SIZE} rows")
                continue
            seed = _child_seed(args.seed, si, 2 + mi)
            history = outdir / f"dnn_trials_{label}.csv" if kind == "dnn" else None
            t0 = time.perf_counter()
            try:
                model = fit_model(kind, train, args, seed, history_path=history)
                fm = FittedModel(kind, model, meta={"feature_names": list(train.feature_names)})
                yhat = fm.predict(test, workers=args.workers)[0]
                if not np.all(np.isfinite(yhat)):
                    raise FloatingPointError("non-finite predictions")
            except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
                metric_rows[label][kind] = None
                failures.append(f"{label}/{kind}: {type(exc).__name__}: {exc}")
                continue
            timings.append(f"{label}/{kind}: {time.perf_counter() - t0:.2f} s")
            metric_rows[label][kind] = metrics.compute(test.y, yhat)
            ranges[label][kind] = metrics.range_breakdown(test.y, yhat)
            hists[label][kind] = metrics.error_histogram(test.y, yhat)

    _write_benchmark_csvs(outdir, metric_rows, ranges, hists)
    text = _benchmark_text(args, sizes, models, metric_rows, ranges, hists, timings, failures)
    (outdir / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _write_benchmark_csvs(outdir, metric_rows, ranges, hists) -> None:
    with (outdir / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "model", "status", "mae", "mse", "rmse", "mape", "n_test"])
        for size, cells in metric_rows.items():
            for model, rep in cells.items():
                if rep is None:
                    w.writerow([size, model, "failed", "", "", "", "", ""])
                else:
                    w.writerow([size, model, "ok", _fmt_float(rep.mae), _fmt_float(rep.mse),
                                _fmt_float(rep.rmse), _fmt_float(rep.mape), rep.n])
    with (outdir / "ranges.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "model", "lower", "upper", "mape", "count"])
        for size, cells in ranges.items():
            for model, rb in cells.items():
                for b in rb.bins:
                    w.writerow([size, model, _fmt_float(b.lower), _fmt_float(b.upper),
                                _fmt_float(b.mape), b.count])
    with (outdir / "histogram.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "model", "lower", "upper", "frequency", "count"])
        for size, cells in hists.items():
            for model, h in cells.items():
                for j, (f, c) in enumerate(zip(h.frequencies, h.counts)):
                    w.writerow([size, model, _fmt_float(h.edges[j]), _fmt_float(h.edges[j + 1]),
                                _fmt_float(f), c])


def _benchmark_text(args, sizes, models, metric_rows, ranges, hists, timings, failures) -> str:
    out = io.StringIO()
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    out.write(f"# nngpbench benchmark run at {stamp}\n")
    out.write(f"sizes={','.join(map(str, sizes))} models={','.join(models)} seed={args.seed} "
              f"train_fraction={args.train_fraction}\n")
    out.write(f"nngp: family={args.family} phi={args.phi:.6g} alpha={args.alpha:.6g} k={args.k}\n\n")
    out.write("Prediction accuracy on the test split\n")
    out.write(metrics.format_metric_table(metric_rows) + "\n")
    for size in metric_rows:
        if ranges[size]:
            out.write(f"MAPE by log(y) range, n={size}\n")
            out.write(metrics.format_range_table(ranges[size]) + "\n")
            out.write(f"Error-rate distribution (%), n={size}\n")
            out.write(metrics.format_histogram_table(hists[size]) + "\n")
    if failures:
        out.write("Failed or skipped cells\n")
        out.writelines(f"  {f}\n" for f in failures)
        out.write("\n")
    out.write("Fit and predict time\n")
    out.writelines(f"  {t}\n" for t in timings)
    return out.getvalue()


def _parse_k_list(text: str) -> list[int]:
    try:
        ks = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad k list {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ConfigError("k values must be positive integers")
    return ks


def cmd_neighbor_curve(args) -> int:
    ks = _parse_k_list(args.k_list)
    ds = _load_source(args, args.seed)
    curve = nngp.neighbor_curve(ds, args.family, args.phi, args.alpha, ks,
                                folds=args.folds, seed=args.seed)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["k", "cv_mse"])
        for k, m in curve:
            w.writerow([k, _fmt_float(m)])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_nngp_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("spatial model")
    g.add_argument("--family", choices=covmodel.FAMILIES, default=nngp.DEFAULT_FAMILY)
    g.add_argument("--phi", type=float, default=nngp.DEFAULT_PHI, help="inverse range (1/km)")
    g.add_argument("--alpha", type=float, default=nngp.DEFAULT_ALPHA, help="tau2/sigma2")
    g.add_argument("--k", type=int, default=nngp.DEFAULT_K, help="nearest neighbours")
    g.add_argument("--sigma2", type=float, default=covmodel.DEFAULT_SPEC.sigma2,
                   help="partial sill for gp-exact (nugget is alpha*sigma2)")


def _add_dnn_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("neural network")
    g.add_argument("--trials", type=int, default=50, help="tuner trial budget")
    g.add_argument("--folds", type=int, default=5, help="cross-validation folds")
    g.add_argument("--optimizer", choices=("adam", "rmsprop"), default="adam")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nngpbench",
        description="Spatial hedonic regression benchmark: OLS, exact GP, NNGP and a neural network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="root random seed")
        p.add_argument("--workers", type=int, default=1, help="thread cap for parallel steps")
        p.add_argument("--config", help="YAML file of option defaults (keys are option names)")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--n", type=int, help="rows (default: the spec's n)")
    p.add_argument("--spec", help="synthetic spec YAML (default: built-in rent-like spec)")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--schema-out", help="schema YAML path (default: next to --out)")
    p.add_argument("--spec-out", help="also write the spec used as YAML")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("variogram", help="fit covariance families to OLS residuals")
    _add_source_args(p)
    p.add_argument("--family", choices=covmodel.FAMILIES, help="fit only this family")
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--max-dist", type=float, help="largest lag in km (default: diagonal/6)")
    p.add_argument("--folds", type=int, default=5, help="bin folds for family selection")
    p.add_argument("--out", help="empirical variogram CSV")
    p.add_argument("--spec-out", help="selected covariance spec as YAML")
    common(p)
    p.set_defaults(func=cmd_variogram)

    p = sub.add_parser("fit", help="fit a model and save it")
    _add_source_args(p)
    p.add_argument("--model", choices=MODELS, required=True)
    p.add_argument("--out", required=True, help="model container path (.npz)")
    _add_nngp_args(p)
    _add_dnn_args(p)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict new rows with a saved model")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True, help="CSV of rows to predict")
    p.add_argument("--schema", help="schema YAML (default: the one stored with the model)")
    p.add_argument("--missing", choices=("error", "drop"), default="error")
    p.add_argument("--level", type=float, default=0.95, help="interval coverage")
    p.add_argument("--out", help="output CSV (default: stdout)")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="compare models across sample sizes")
    _add_source_args(p)
    p.add_argument("--sizes", default=",".join(map(str, DEFAULT_SIZES)))
    p.add_argument("--models", default="ols,nngp,dnn", help=f"comma list from {','.join(MODELS)}")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--large", action="store_true", help="allow sizes up to 1e6 (ols and nngp only)")
    p.add_argument("--out-dir", required=True)
    _add_nngp_args(p)
    _add_dnn_args(p)
    common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("neighbor-curve", help="CV MSE of NNGP against neighbour count")
    _add_source_args(p)
    p.add_argument("--k-list", default="5,10,20,30,45")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--out", help="output CSV (default: stdout)")
    _add_nngp_args(p)
    common(p)
    p.set_defaults(func=cmd_neighbor_curve)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str], args):
    """Re-parse with defaults taken from the ``--config`` YAML file."""
    path = Path(args.config)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping of option names to values")
    known = vars(args)
    values = {}
    for key, value in raw.items():
        dest = str(key).replace("-", "_")
        if dest not in known or dest in ("func", "command", "config"):
            raise ConfigError(f"{path}: unknown option {key!r}")
        values[dest] = value
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            args = _apply_config(parser, argv, args)
        if getattr(args, "workers", 1) < 1:
            raise ConfigError("--workers must be >= 1")
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (gp_exact.SizeCapError, mlp.TrainingDiverged, np.linalg.LinAlgError,
            ModelFailure, RuntimeError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (DataError, ConfigError, yaml.YAMLError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
