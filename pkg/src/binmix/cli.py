"""Command-line interface.

Every subcommand prints a one-line JSON summary on success and a JSON error
record on stderr on failure.  Exit codes: 0 success, 2 validation error,
3 convergence failure, 4 I/O error.  All randomness is controlled by
``--seed``; when absent a seed is drawn from system entropy and echoed in
the summary.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys

import numpy as np

from . import io as bio
from .clustering import assign_clusters, build_trajectories, transition_matrix
from .em import EmConfig
from .errors import BinmixError, ConvergenceError, GenerationError, OptimizationError, ValidationError
from .imputation import impute_multiple
from .inference import bootstrap
from .mcem import McemConfig, fit_mcem
from .model import ModelParams, OutcomeSpec
from .selection import select_k
from .simulation import (
    PatternSelection,
    SelectionModel,
    SimulationDgp,
    apply_selection,
    benchmark_dgp,
    benchmark_selection,
    run_study,
    simulate_complete,
)

_EXIT_VALIDATION = 2
_EXIT_CONVERGENCE = 3
_EXIT_IO = 4


def _entropy_seed() -> int:
    return int(np.random.SeedSequence().entropy % (2**63))


def _resolve_seed(args) -> int:
    return args.seed if args.seed is not None else _entropy_seed()


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _parse_eta(text: str) -> float:
    if text.lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _mcem_config(args, k: int) -> McemConfig:
    em = EmConfig(
        n_components=k,
        tolerance=args.tolerance,
        max_iterations=args.max_iter,
        n_random_inits=args.inits,
        seed=args.resolved_seed,
    )
    return McemConfig(em=em, n_imputations=args.m_imputations)


def _add_fit_knobs(parser, inits_default: int = 20) -> None:
    parser.add_argument("--m-imputations", "--m", dest="m_imputations", type=int, default=10,
                        help="imputations per outer iteration (default 10)")
    parser.add_argument("--tolerance", type=float, default=1e-4)
    parser.add_argument("--max-iter", dest="max_iter", type=int, default=500)
    parser.add_argument("--inits", type=int, default=inits_default,
                        help="number of random restarts")
    parser.add_argument("--seed", type=int, default=None)


def _load_data(args):
    schema = bio.load_schema(args.schema)
    return bio.load_csv(args.data, schema), schema


def _load_model(path):
    return bio.load_model_json(path)


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------

def _cmd_fit(args) -> int:
    data, _ = _load_data(args)
    args.resolved_seed = _resolve_seed(args)
    config = _mcem_config(args, args.k)
    report = fit_mcem(data, config)
    params = report.params
    if args.canonical:
        from .model import reorder_components, severity_order
        params = reorder_components(params, severity_order(params))
    bio.save_model_json(
        args.out, params, data.spec,
        log_likelihood=report.log_likelihood, converged=report.converged,
        iterations=report.iterations, seed=args.resolved_seed,
        config=bio.config_echo(config),
    )
    _emit({"command": "fit", "out": args.out, "log_likelihood": report.log_likelihood,
           "converged": report.converged, "iterations": report.iterations,
           "seed": args.resolved_seed})
    return 0 if report.converged else _EXIT_CONVERGENCE


def _cmd_bootstrap(args) -> int:
    data, _ = _load_data(args)
    params, spec, meta = _load_model(args.model)
    if spec.n_outcomes != data.n_outcomes:
        raise ValidationError("model and data disagree on the outcome dimension")
    args.resolved_seed = _resolve_seed(args)
    echo = meta.get("config") or {}
    em = EmConfig(
        n_components=params.n_components,
        tolerance=echo.get("tolerance", args.tolerance),
        max_iterations=echo.get("max_iterations", args.max_iter),
        n_random_inits=1,
        seed=args.resolved_seed,
    )
    config = McemConfig(em=em, n_imputations=echo.get("n_imputations", args.m_imputations))
    report = bootstrap(data, params, args.b, config, seed=args.resolved_seed,
                       method=args.method)
    bio.save_bootstrap_csv(report, args.out)
    if args.json_out:
        bio.save_bootstrap_json(report, args.json_out)
    _emit({"command": "bootstrap", "out": args.out, "B": args.b,
           "failed_replicates": report.failed_replicates,
           "label_switched": report.label_switched, "warning": report.warning,
           "seed": args.resolved_seed})
    return 0


def _cmd_impute(args) -> int:
    data, schema = _load_data(args)
    params, spec, _ = _load_model(args.model)
    if spec.n_outcomes != data.n_outcomes:
        raise ValidationError("model and data disagree on the outcome dimension")
    args.resolved_seed = _resolve_seed(args)
    imputed = impute_multiple(data, params, args.m, seed=args.resolved_seed)
    paths = []
    if args.stacked:
        path = f"{args.out_prefix}.csv"
        stacked = imputed.stack()
        copy_col = [m for m in range(len(imputed)) for _ in range(data.n)]
        bio.save_csv(stacked, path, schema, extra={"copy": copy_col})
        paths.append(path)
    else:
        for m, copy in enumerate(imputed.datasets):
            path = f"{args.out_prefix}_m{m + 1}.csv"
            bio.save_csv(copy, path, schema)
            paths.append(path)
    _emit({"command": "impute", "m": args.m, "files": paths, "seed": args.resolved_seed})
    return 0


def _cmd_cluster(args) -> int:
    data, _ = _load_data(args)
    params, spec, _ = _load_model(args.model)
    if spec.n_outcomes != data.n_outcomes:
        raise ValidationError("model and data disagree on the outcome dimension")
    assignment = assign_clusters(data, params)
    bio.save_assignments_csv(assignment, args.out)
    counts = np.bincount(assignment.labels, minlength=params.n_components + 1)[1:]
    _emit({"command": "cluster", "out": args.out, "sizes": counts.tolist()})
    return 0


_STRATIFY_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*(==|!=|<=|>=|<|>)\s*([-+0-9.eE]+)\s*$")


def _stratum_mask(expr: str, panel, schema) -> np.ndarray:
    match = _STRATIFY_RE.match(expr)
    if not match:
        raise ValidationError(f"cannot parse stratify expression {expr!r}")
    name, op, value = match.group(1), match.group(2), float(match.group(3))
    if name not in schema.covariates:
        raise ValidationError(f"stratify column {name!r} is not a covariate")
    col = panel.data.covariates[:, schema.covariates.index(name)]
    ops = {"==": np.equal, "!=": np.not_equal, "<=": np.less_equal,
           ">=": np.greater_equal, "<": np.less, ">": np.greater}
    return ops[op](col, value)


def _cmd_trajectory(args) -> int:
    schema = bio.load_schema(args.schema)
    if args.subject_col:
        schema = bio.DataSchema(
            covariates=schema.covariates, outcomes=schema.outcomes,
            subject=args.subject_col, time=args.time_col or schema.time,
            missing_token=schema.missing_token)
    panel = bio.load_panel(args.data, schema)
    params, spec, _ = _load_model(args.model)
    if spec.n_outcomes != panel.data.n_outcomes:
        raise ValidationError("model and data disagree on the outcome dimension")
    traj = build_trajectories(panel, params)
    traj_path = f"{args.out}.trajectories.csv"
    bio.save_trajectories_csv(traj, traj_path)
    summary = {"command": "trajectory", "trajectories": traj_path}
    if args.from_time is not None and args.to_time is not None:
        stratum = _stratum_mask(args.stratify, panel, schema) if args.stratify else None
        matrix = transition_matrix(traj, args.from_time, args.to_time, stratum)
        trans_path = f"{args.out}.transitions.csv"
        bio.save_transitions_csv(matrix, trans_path)
        summary["transitions"] = trans_path
        summary["subjects"] = matrix.n_subjects
    _emit(summary)
    return 0


def _cmd_select(args) -> int:
    data, _ = _load_data(args)
    args.resolved_seed = _resolve_seed(args)
    config = _mcem_config(args, args.k_min)
    report = select_k(data, range(args.k_min, args.k_max + 1), args.criterion, config)
    bio.save_selection_csv(report, args.out)
    _emit({"command": "select", "out": args.out, "criterion": args.criterion,
           "chosen_k": report.chosen_k, "seed": args.resolved_seed})
    return 0


def _dgp_from_config(path) -> tuple[SimulationDgp, SelectionModel | None]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        dgp = SimulationDgp(
            covariate_mean=np.array(raw["covariate_mean"], dtype=float),
            covariate_cov=np.array(raw["covariate_cov"], dtype=float),
            params=ModelParams(beta=np.array(raw["beta"], dtype=float),
                               theta=np.array(raw["theta"], dtype=float)),
            spec=OutcomeSpec(maxima=np.array(raw["maxima"], dtype=np.int64)),
        )
        selection = None
        if "selection" in raw:
            patterns = tuple(
                PatternSelection(
                    bits=tuple(int(c) for c in entry["bits"]),
                    intercept=float(entry["intercept"]),
                    x_coef=np.array(entry["x_coef"], dtype=float),
                    y_coef={int(j) - 1: float(v) for j, v in entry.get("y_coef", {}).items()},
                )
                for entry in raw["selection"]["patterns"]
            )
            selection = SelectionModel(patterns=patterns, eta=0.0)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed DGP config {path}: {exc}") from exc
    return dgp, selection


def _resolve_dgp(args) -> tuple[SimulationDgp, SelectionModel | None]:
    if args.dgp_config:
        return _dgp_from_config(args.dgp_config)
    if args.preset != "benchmark":
        raise ValidationError(f"unknown preset {args.preset!r}")
    return benchmark_dgp(), benchmark_selection()


def _schema_for_dgp(dgp: SimulationDgp) -> bio.DataSchema:
    return bio.DataSchema(
        covariates=tuple(f"x{a + 1}" for a in range(dgp.params.n_covariates)),
        outcomes=tuple((f"y{j + 1}", int(m)) for j, m in enumerate(dgp.spec.maxima)),
    )


def _cmd_simulate(args) -> int:
    dgp, selection = _resolve_dgp(args)
    args.resolved_seed = _resolve_seed(args)
    eta = _parse_eta(args.eta)
    data, labels = simulate_complete(dgp, args.n, seed=args.resolved_seed)
    if selection is not None and math.isfinite(eta):
        from dataclasses import replace
        data = apply_selection(data, replace(selection, eta=eta),
                               seed=np.random.SeedSequence(args.resolved_seed, spawn_key=(1,)))
    schema = _schema_for_dgp(dgp)
    bio.save_csv(data, args.out, schema)
    schema_path = args.schema_out or f"{args.out}.schema.json"
    bio.save_schema(schema, schema_path)
    if args.labels_out:
        with open(args.labels_out, "w", encoding="utf-8") as fh:
            fh.write("label\n")
            fh.writelines(f"{int(z)}\n" for z in labels)
    complete_rows = int(data.observed.all(axis=1).sum())
    _emit({"command": "simulate", "out": args.out, "schema": schema_path, "n": args.n,
           "eta": args.eta, "complete_rows": complete_rows, "seed": args.resolved_seed})
    return 0


_STUDY_DEFAULTS = {
    "n_grid": None, "eta_grid": None, "u": 100, "b": 0, "seed": None,
    "m_imputations": 10, "tolerance": 1e-4, "max_iter": 500, "inits": 10,
    "preset": "benchmark", "dgp_config": None,
}


def _cmd_study(args) -> int:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            flat = json.load(fh)
        unknown = set(flat) - set(_STUDY_DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown study config keys: {sorted(unknown)}")
        # flags that were left at their parser default yield to the file
        for key, value in flat.items():
            if getattr(args, key) == _STUDY_DEFAULTS[key]:
                setattr(args, key, value)
    if args.n_grid is None or args.eta_grid is None:
        raise ValidationError("study needs n_grid and eta_grid (flags or config file)")
    dgp, selection = _resolve_dgp(args)
    args.resolved_seed = _resolve_seed(args)
    n_grid = [int(v) for v in str(args.n_grid).split(",") if v]
    eta_grid = [_parse_eta(str(v)) for v in str(args.eta_grid).split(",") if v]
    config = _mcem_config(args, dgp.params.n_components)
    report = run_study(dgp, selection, n_grid, eta_grid, args.u, args.b, config,
                       seed=args.resolved_seed)
    bio.save_study_csv(report, args.out)
    bio.save_study_json(report, f"{args.out}.detail.json")
    _emit({"command": "study", "out": args.out, "cells": len(report.cells),
           "seed": args.resolved_seed})
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binmix",
        description="Covariate-gated binomial-product mixtures for bounded discrete outcomes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the mixture (handles missing outcomes)")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k", type=int, required=True)
    _add_fit_knobs(p)
    p.add_argument("--canonical", action="store_true",
                   help="relabel components by descending mean success probability "
                        "(reporting convenience; fitting never relabels)")
    p.add_argument("--out", required=True, help="output model JSON")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("bootstrap", help="bootstrap standard errors and 95%% CIs")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--b", type=int, default=1000)
    p.add_argument("--method", choices=["normal", "percentile"], default="normal")
    _add_fit_knobs(p)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=_cmd_bootstrap)

    p = sub.add_parser("impute", help="write M completed copies of the data")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--stacked", action="store_true",
                   help="one CSV with a copy-index column instead of M files")
    p.set_defaults(func=_cmd_impute)

    p = sub.add_parser("cluster", help="assign rows to components")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("trajectory", help="per-visit labels and transition matrices")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--subject-col", default=None)
    p.add_argument("--time-col", default=None)
    p.add_argument("--from", dest="from_time", type=int, default=None)
    p.add_argument("--to", dest="to_time", type=int, default=None)
    p.add_argument("--stratify", default=None, help="e.g. 'age>=70'")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=_cmd_trajectory)

    p = sub.add_parser("select", help="AIC/BIC sweep over the component count")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k-min", type=int, required=True)
    p.add_argument("--k-max", type=int, required=True)
    p.add_argument("--criterion", choices=["aic", "bic"], default="bic")
    _add_fit_knobs(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    p.add_argument("--preset", default="benchmark")
    p.add_argument("--dgp-config", default=None, help="JSON overriding the preset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eta", default="inf", help="missingness dial; 'inf' disables masking")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out", default=None)
    p.add_argument("--labels-out", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("study", help="MSE/coverage evaluation over an (n, eta) grid")
    p.add_argument("--preset", default="benchmark")
    p.add_argument("--dgp-config", default=None)
    p.add_argument("--config", default=None,
                   help="flat key-value JSON supplying any study setting not given as a flag")
    p.add_argument("--n-grid", dest="n_grid", default=None, help="comma-separated sample sizes")
    p.add_argument("--eta-grid", dest="eta_grid", default=None,
                   help="comma-separated etas ('inf' allowed)")
    p.add_argument("--u", type=int, default=100, help="replicates per cell")
    p.add_argument("--b", type=int, default=0, help="bootstrap size (0 skips coverage)")
    _add_fit_knobs(p, inits_default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_study)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, GenerationError) as exc:
        print(json.dumps({"error": "validation", "message": str(exc)}), file=sys.stderr)
        return _EXIT_VALIDATION
    except (ConvergenceError, OptimizationError) as exc:
        print(json.dumps({"error": "convergence", "message": str(exc)}), file=sys.stderr)
        return _EXIT_CONVERGENCE
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return _EXIT_IO
    except BinmixError as exc:
        print(json.dumps({"error": "validation", "message": str(exc)}), file=sys.stderr)
        return _EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
