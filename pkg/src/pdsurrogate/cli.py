"""Command-line entry point.

Exit status is 0 on success, 1 when a pipeline step fails (bad data, schema
mismatch, non-convergence, oracle errors) and 2 for usage errors, including
input paths that do not exist.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .blackbox import GbmModel, GbmParams, cv_select_trees, load_table_oracle, train_gbm, write_table_oracle
from .data import Dataset, Schema, load_csv, write_csv, write_schema
from .effects import ale_univariate, pd_interaction_pure, pd_univariate
from .evaluate import evaluate_surrogates
from .explain import DEFAULT_TABLE_CAP, decision_table, global_effects, local_explain
from .pipeline import MaidrrConfig, SurrogateModel, TuneReport, autotune, log_grid

logger = logging.getLogger("pdsurrogate")


class UsageError(Exception):
    """Bad invocation; maps to exit status 2."""


# ------------------------------------------------------------------ helpers


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _grid(text: str) -> list[float]:
    try:
        lo, hi, count = text.split(":")
        return log_grid(float(lo), float(hi), int(count))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected lo:hi:count with 0 < lo <= hi, got {text!r} ({exc})")


def _h_rule(text: str):
    if text == "ecdf50":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--h takes 'ecdf50' or a number") from None


def _load_data(args) -> Dataset:
    schema_path = _existing(args.schema, "schema file")
    data_path = _existing(args.data, "data file")
    return load_csv(data_path, Schema.load(schema_path))


def _gbm_params(args) -> GbmParams:
    return GbmParams(T_max=args.trees, learning_rate=args.learning_rate, bag_fraction=args.bag_fraction,
                     seed=args.seed, max_depth=args.max_depth, min_node_size=args.min_node_size)


def _resolve_blackbox(spec: str, ds: Dataset, args):
    """``gbm`` trains in place, ``gbm:<path>`` loads a model, ``table:<dir>`` reads prediction tables."""
    kind, _, arg = spec.partition(":")
    if kind == "gbm" and not arg:
        params = _gbm_params(args)
        if getattr(args, "gbm_cv_folds", 0):
            params = GbmParams(**{**params.__dict__, "T_max": cv_select_trees(ds, params, args.gbm_cv_folds)})
        return train_gbm(ds, params), {"blackbox": "gbm", "gbm": params.__dict__}
    if kind == "gbm":
        path = _existing(arg, "black-box model")
        model = GbmModel.load(path)
        _check_schema(model.features, ds, "black-box model")
        return model, {"blackbox": "gbm", "gbm_T": model.T}
    if kind == "table":
        directory = _existing(arg, "prediction table directory")
        _existing(str(Path(arg) / "predictions.csv"), "prediction table")
        return load_table_oracle(directory, ds), {"blackbox": "table"}
    raise UsageError(f"unknown --blackbox {spec!r}; use gbm, gbm:<path> or table:<dir>")


def _check_schema(features, ds: Dataset, what: str) -> None:
    if not ds.same_schema(features):
        theirs = [f.name for f in features]
        raise SchemaMismatch(f"{what} was built for features {theirs}, data has {ds.names}")


class SchemaMismatch(ValueError):
    pass


def _dump(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _header(command: str, config: dict) -> dict:
    return {"tool": "pdsurrogate", "version": __version__, "command": command, "config": config}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


# ------------------------------------------------------------------ commands


def cmd_train_bb(args) -> int:
    ds = _load_data(args)
    params = _gbm_params(args)
    curve_info = {}
    if args.cv_folds:
        T = cv_select_trees(ds, params, args.cv_folds)
        curve_info = {"cv_folds": args.cv_folds, "T_selected": T, "T_max": params.T_max}
        params = GbmParams(**{**params.__dict__, "T_max": T})
    model = train_gbm(ds, params)
    model.save(args.out)
    if args.report:
        _dump(_header("train-bb", {"gbm": params.__dict__, **curve_info}), args.report)
    return 0


def _maidrr_config(args) -> MaidrrConfig:
    return MaidrrConfig(
        lambda_grid_marg=args.lambda_grid_marg or log_grid(),
        lambda_grid_intr=args.lambda_grid_intr or log_grid(),
        k_max=args.kmax, K=args.folds, seed=args.seed, h_rule=args.h,
        interactions=not args.no_interactions, cv_regroup=args.cv_regroup,
        background_cap=args.background_cap, h_row_cap=args.h_row_cap, threads=args.threads,
    )


def cmd_distill(args) -> int:
    ds = _load_data(args)
    cfg = _maidrr_config(args)
    oracle, bb_info = _resolve_blackbox(args.blackbox, ds, args)
    report = TuneReport()
    model = autotune(oracle, ds, cfg, report)
    # thread count does not change results, so it stays out of the artifacts
    resolved = {**cfg.to_dict(), **bb_info}
    resolved.pop("threads", None)
    model.config = resolved
    model.save(args.out)
    if args.report:
        _dump(_jsonable({**_header("distill", resolved), "tuning": report.to_dict()}), args.report)
    return 0


def cmd_evaluate(args) -> int:
    ds = _load_data(args)
    model = SurrogateModel.load(_existing(args.model, "model file"))
    _check_schema(model.features, ds, "model")
    oracle, bb_info = _resolve_blackbox(args.blackbox, ds, args)
    rep = evaluate_surrogates(model, oracle, ds, holdout=args.holdout, seed=args.seed,
                              dataset_name=args.dataset_name)
    cfg = {"holdout": args.holdout, "seed": args.seed, **bb_info}
    _dump(_jsonable({**_header("evaluate", cfg), **rep.to_dict()}), args.out)
    if args.table:
        rep.write_table(args.table)
    return 0


def cmd_explain(args) -> int:
    model = SurrogateModel.load(_existing(args.model, "model file"))
    ds = _load_data(args)
    _check_schema(model.features, ds, "model")
    rows = args.rows or [0]
    for r in rows:
        if not 0 <= r < ds.n:
            raise UsageError(f"row {r} out of range for {ds.n} rows")
    out = []
    for r in rows:
        ex = local_explain(model, ds, r, exposure=args.exposure, level=args.level)
        out.append({"row": r, **ex.to_dict(), "reconstruction": ex.reconstruct()})
        if args.bars:
            path = Path(args.bars)
            if len(rows) > 1:
                path = path.with_name(f"{path.stem}_{r}{path.suffix}")
            ex.write_bar_csv(path)
    payload = {**_header("explain", {"rows": rows, "exposure": args.exposure, "level": args.level,
                                     "seed": model.config.get("seed")}),
               "global_effects": [e.__dict__ for e in global_effects(model, args.level)]
               if model.glm.converged else None,
               "instances": out}
    _dump(_jsonable(payload), args.out)
    return 0


def cmd_export_table(args) -> int:
    if not args.csv and not args.json:
        raise UsageError("export-table needs --csv and/or --json")
    model = SurrogateModel.load(_existing(args.model, "model file"))
    table = decision_table(model, cap=args.cap)
    if args.csv:
        table.write_csv(args.csv)
    if args.json:
        table.write_json(args.json, _header("export-table", {"cap": args.cap, "seed": model.config.get("seed")}))
    return 0


def cmd_plot_effects(args) -> int:
    """Effect curves as CSV/JSON files for external plotting."""
    ds = _load_data(args)
    oracle, bb_info = _resolve_blackbox(args.blackbox, ds, args)
    model = SurrogateModel.load(_existing(args.model, "model file")) if args.model else None
    if model is not None:
        _check_schema(model.features, ds, "model")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = args.features or ds.names
    for name in names:
        if name not in ds.names:
            raise UsageError(f"unknown feature {name!r}")
        prof = (ale_univariate(oracle, ds, name, n_bins=args.ale_bins) if args.method == "ale"
                else pd_univariate(oracle, ds, name, background_cap=args.background_cap, seed=args.seed))
        rows = prof.to_rows()
        grouping = next((g for g in model.marginal_groupings if g.feature == name), None) if model else None
        if grouping is not None and args.method == "pd":
            labels = grouping.labels()
            for r, g in zip(rows, grouping.assignment):
                r["group"] = labels[g]
                r["group_effect"] = float(grouping.group_effect[g])
        _write_rows(out_dir / f"effect_{name}.csv", rows)
        _dump(_jsonable({**_header("plot-effects", {"method": args.method, "seed": args.seed, **bb_info}),
                         **prof.to_dict(), "points": rows}), out_dir / f"effect_{name}.json")
    for pair in args.pairs or []:
        a, _, b = pair.partition(":")
        if a not in ds.names or b not in ds.names:
            raise UsageError(f"unknown pair {pair!r}; use a:b")
        prof = pd_interaction_pure(oracle, ds, a, b, background_cap=args.background_cap, seed=args.seed)
        _write_rows(out_dir / f"effect_{a}__{b}.csv", prof.to_rows())
    return 0


def _write_rows(path, rows) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def cmd_export_predictions(args) -> int:
    ds = _load_data(args)
    oracle, _ = _resolve_blackbox(args.blackbox, ds, args)
    if args.pairs is None:
        # distill screens every pair, so by default export all of them
        pairs = list(itertools.combinations(args.features or ds.names, 2))
    else:
        pairs = [tuple(p.split(":", 1)) for p in args.pairs]
    write_table_oracle(oracle, ds, args.out_dir, features=args.features, pairs=pairs)
    return 0


def cmd_synth(args) -> int:
    from .synth import make_synthetic, truth

    ds = make_synthetic(args.n, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out / "data.csv")
    write_schema(ds, out / "schema.json")
    _dump(_jsonable({**_header("synth", {"n": args.n, "seed": args.seed}), "truth": truth()}),
          out / "truth.json")
    return 0


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        raise SystemExit(2)


def _add_data(p, required=True):
    p.add_argument("--data", required=required, help="CSV with header")
    p.add_argument("--schema", required=required, help="JSON schema")


def _add_gbm(p):
    g = p.add_argument_group("built-in GBM")
    g.add_argument("--trees", type=int, default=1000, help="number of trees (upper bound with CV)")
    g.add_argument("--learning-rate", type=float, default=0.01)
    g.add_argument("--bag-fraction", type=float, default=0.75)
    g.add_argument("--max-depth", type=int, default=2)
    g.add_argument("--min-node-size", type=int, default=20)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdsurrogate", description="Distill a black-box claim-frequency model into a "
                                                       "segmented Poisson GLM.")
    parser.add_argument("--version", action="version", version=f"pdsurrogate {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-bb", help="train the built-in Poisson GBM")
    _add_data(p)
    _add_gbm(p)
    p.add_argument("--cv-folds", type=int, default=0, help="select the tree count by K-fold CV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_train_bb)

    p = sub.add_parser("distill", help="tune and fit the surrogate GLM")
    _add_data(p)
    p.add_argument("--blackbox", default="gbm", help="gbm | gbm:<model.json> | table:<dir>")
    _add_gbm(p)
    p.add_argument("--gbm-cv-folds", type=int, default=0, help="with --blackbox gbm, pick trees by CV")
    p.add_argument("--lambda-grid-marg", type=_grid, help="lo:hi:count, log-spaced")
    p.add_argument("--lambda-grid-intr", type=_grid, help="lo:hi:count, log-spaced")
    p.add_argument("--kmax", type=int, default=15)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=_h_rule, default="ecdf50", help="'ecdf50' or an explicit H cutoff")
    p.add_argument("--no-interactions", action="store_true")
    p.add_argument("--cv-regroup", action="store_true", help="recompute groupings inside each fold")
    p.add_argument("--background-cap", type=int)
    p.add_argument("--h-row-cap", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("evaluate", help="fidelity and accuracy against the black box")
    _add_data(p)
    p.add_argument("--model", required=True)
    p.add_argument("--blackbox", required=True)
    _add_gbm(p)
    p.add_argument("--holdout", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset-name", default="data")
    p.add_argument("--out", required=True)
    p.add_argument("--table", help="CSV with rows (metric, model) and one column per dataset")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="per-instance factor decomposition")
    _add_data(p)
    p.add_argument("--model", required=True)
    p.add_argument("--rows", type=int, nargs="+")
    p.add_argument("--exposure", type=float)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True)
    p.add_argument("--bars", help="bar-chart CSV (label, factor, ci_low, ci_high)")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("export-table", help="decision table of all group combinations")
    p.add_argument("--model", required=True)
    p.add_argument("--cap", type=int, default=DEFAULT_TABLE_CAP)
    p.add_argument("--csv")
    p.add_argument("--json")
    p.set_defaults(func=cmd_export_table)

    p = sub.add_parser("plot-effects", help="write effect curves for plotting")
    _add_data(p)
    p.add_argument("--blackbox", default="gbm")
    _add_gbm(p)
    p.add_argument("--model", help="overlay the surrogate's groups")
    p.add_argument("--features", nargs="+")
    p.add_argument("--pairs", nargs="+", help="pure interaction effects, as a:b")
    p.add_argument("--method", choices=["pd", "ale"], default="pd")
    p.add_argument("--ale-bins", type=int, default=20)
    p.add_argument("--background-cap", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_plot_effects)

    p = sub.add_parser("export-predictions", help="write black-box prediction tables")
    _add_data(p)
    p.add_argument("--blackbox", required=True)
    _add_gbm(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--features", nargs="+", help="features with univariate grids (default all)")
    p.add_argument("--pairs", nargs="*", help="pair grids as a:b (default all pairs of --features)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export_predictions)

    p = sub.add_parser("synth", help="write the synthetic benchmark data")
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except (ValueError, KeyError, RuntimeError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc).strip("'\"")}), file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
