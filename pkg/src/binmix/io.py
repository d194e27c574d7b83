"""Dataset/schema/report serialization.

The column layout of a CSV is described by a sidecar schema (JSON): which
columns are covariates, which are outcomes and their score ceilings, optional
subject/time columns for panels, and the missing-value token.  Ceilings live
in the schema because they are domain knowledge, not a property of any one
file.  Outcome cells equal to the token (or empty) are missing; covariates
must always parse as numbers.

Floats are serialized with shortest round-trip repr, so save -> load -> save
is byte-identical for every artifact here.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .clustering import ClusterAssignment, Panel, TrajectoryTable, TransitionMatrix
from .errors import ValidationError
from .inference import BootstrapReport
from .mcem import McemConfig
from .model import Dataset, ModelParams, OutcomeSpec
from .selection import SelectionReport
from .simulation import StudyReport


@dataclass(frozen=True)
class DataSchema:
    covariates: tuple[str, ...]
    outcomes: tuple[tuple[str, int], ...]
    subject: str | None = None
    time: str | None = None
    missing_token: str = "NA"

    def __post_init__(self):
        names = list(self.covariates) + [n for n, _ in self.outcomes]
        if self.subject:
            names.append(self.subject)
        if self.time:
            names.append(self.time)
        if len(set(names)) != len(names):
            raise ValidationError("schema column names must be unique")
        if not self.outcomes:
            raise ValidationError("schema needs at least one outcome column")
        if any(m < 1 for _, m in self.outcomes):
            raise ValidationError("outcome maxima must be >= 1")
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "outcomes", tuple((str(n), int(m)) for n, m in self.outcomes))

    @property
    def spec(self) -> OutcomeSpec:
        return OutcomeSpec(maxima=np.array([m for _, m in self.outcomes]))


def load_schema(path) -> DataSchema:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        return DataSchema(
            covariates=tuple(raw.get("covariates", [])),
            outcomes=tuple((o["name"], int(o["max"])) for o in raw["outcomes"]),
            subject=raw.get("subject"),
            time=raw.get("time"),
            missing_token=raw.get("missing_token", "NA"),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed schema file {path}: {exc}") from exc


def save_schema(schema: DataSchema, path) -> None:
    doc = {
        "covariates": list(schema.covariates),
        "outcomes": [{"name": n, "max": m} for n, m in schema.outcomes],
        "subject": schema.subject,
        "time": schema.time,
        "missing_token": schema.missing_token,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v: float) -> str:
    return repr(float(v))


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, header row required") from None
        rows = list(reader)
    return header, rows


def _column_map(header, schema: DataSchema, path) -> dict[str, int]:
    pos = {name: i for i, name in enumerate(header)}
    required = list(schema.covariates) + [n for n, _ in schema.outcomes]
    if schema.subject:
        required.append(schema.subject)
    if schema.time:
        required.append(schema.time)
    for name in required:
        if name not in pos:
            raise ValidationError(f"{path}: required column {name!r} not in header")
    return pos


def _parse(path, schema: DataSchema, require_panel: bool):
    header, rows = _read_rows(path)
    pos = _column_map(header, schema, path)
    if require_panel and not (schema.subject and schema.time):
        raise ValidationError("schema must declare subject and time columns for panel data")

    n = len(rows)
    if n == 0:
        raise ValidationError(f"{path}: no data rows")
    p = len(schema.covariates)
    d = len(schema.outcomes)
    x = np.empty((n, p))
    y = np.zeros((n, d), dtype=np.int64)
    observed = np.ones((n, d), dtype=bool)
    subjects = []
    times = []
    missing = {schema.missing_token, ""}

    for i, row in enumerate(rows):
        rownum = i + 2  # 1-based with header
        for a, name in enumerate(schema.covariates):
            cell = row[pos[name]].strip()
            if cell in missing:
                raise ValidationError(f"{path}:{rownum}: covariate {name!r} is missing")
            try:
                x[i, a] = float(cell)
            except ValueError:
                raise ValidationError(
                    f"{path}:{rownum}: covariate {name!r} is not numeric: {cell!r}") from None
        for a, (name, n_max) in enumerate(schema.outcomes):
            cell = row[pos[name]].strip()
            if cell in missing:
                observed[i, a] = False
                continue
            try:
                val = int(cell)
            except ValueError:
                raise ValidationError(
                    f"{path}:{rownum}: outcome {name!r} is not an integer: {cell!r}") from None
            if not 0 <= val <= n_max:
                raise ValidationError(
                    f"{path}:{rownum}: outcome {name!r} is {val}, outside [0, {n_max}]")
            y[i, a] = val
        if require_panel:
            subjects.append(row[pos[schema.subject]].strip())
            cell = row[pos[schema.time]].strip()
            try:
                times.append(int(cell))
            except ValueError:
                raise ValidationError(
                    f"{path}:{rownum}: time column is not an integer: {cell!r}") from None

    data = Dataset(covariates=x, outcomes=y, spec=schema.spec, observed=observed)
    if require_panel:
        return Panel(data=data, subject_ids=np.array(subjects, dtype=object),
                     time_index=np.array(times))
    return data


def load_csv(path, schema: DataSchema) -> Dataset:
    return _parse(path, schema, require_panel=False)


def load_panel(path, schema: DataSchema) -> Panel:
    return _parse(path, schema, require_panel=True)


def save_csv(data: Dataset, path, schema: DataSchema, subject_ids=None, time_index=None,
             extra: dict[str, list] | None = None) -> None:
    """Write a dataset in the schema's layout; missing cells get the token."""
    header = []
    if schema.subject and subject_ids is not None:
        header.append(schema.subject)
    if schema.time and time_index is not None:
        header.append(schema.time)
    header += list(schema.covariates) + [n for n, _ in schema.outcomes]
    extra = extra or {}
    header += list(extra)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = []
            if schema.subject and subject_ids is not None:
                row.append(str(subject_ids[i]))
            if schema.time and time_index is not None:
                row.append(str(int(time_index[i])))
            row += [_fmt(v) for v in data.covariates[i]]
            row += [
                str(int(data.outcomes[i, j])) if data.observed[i, j] else schema.missing_token
                for j in range(data.n_outcomes)
            ]
            row += [str(extra[name][i]) for name in extra]
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Model JSON
# ---------------------------------------------------------------------------

def config_echo(config: McemConfig) -> dict:
    return {
        "n_components": config.em.n_components,
        "tolerance": config.em.tolerance,
        "max_iterations": config.em.max_iterations,
        "n_random_inits": config.em.n_random_inits,
        "gating": asdict(config.em.gating),
        "n_imputations": config.n_imputations,
        "max_outer_iterations": config.max_outer_iterations,
    }


def save_model_json(path, params: ModelParams, spec: OutcomeSpec, *,
                    log_likelihood: float | None = None, converged: bool | None = None,
                    iterations: int | None = None, seed: int | None = None,
                    config: dict | None = None) -> None:
    doc = {
        "k": params.n_components,
        "p": params.n_covariates,
        "d": params.n_outcomes,
        "maxima": [int(m) for m in spec.maxima],
        "beta": [float(v) for v in params.beta.ravel()],
        "theta": [float(v) for v in params.theta.ravel()],
        "log_likelihood": log_likelihood,
        "converged": converged,
        "iterations": iterations,
        "seed": seed,
        "config": config,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model_json(path) -> tuple[ModelParams, OutcomeSpec, dict]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        k, p, d = int(doc["k"]), int(doc["p"]), int(doc["d"])
        beta = np.array(doc["beta"], dtype=float).reshape(k, p + 1)
        theta = np.array(doc["theta"], dtype=float).reshape(k, d)
        spec = OutcomeSpec(maxima=np.array(doc["maxima"], dtype=np.int64))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed model file {path}: {exc}") from exc
    if spec.n_outcomes != d:
        raise ValidationError(f"model file {path}: maxima length disagrees with d")
    params = ModelParams(beta=beta, theta=theta)
    meta = {key: doc.get(key) for key in
            ("log_likelihood", "converged", "iterations", "seed", "config")}
    return params, spec, meta


# ---------------------------------------------------------------------------
# Report exports
# ---------------------------------------------------------------------------

def save_bootstrap_csv(report: BootstrapReport, path) -> None:
    estimate = report.estimate.free_vector()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "estimate", "se", "lower", "upper"])
        for i, name in enumerate(report.parameter_names):
            writer.writerow([
                name, _fmt(estimate[i]), _fmt(report.standard_errors[i]),
                _fmt(report.ci_lower[i]), _fmt(report.ci_upper[i]),
            ])


def save_bootstrap_json(report: BootstrapReport, path) -> None:
    doc = {
        "B": report.B,
        "seed": report.seed,
        "method": report.method,
        "failed_replicates": report.failed_replicates,
        "label_switched": report.label_switched,
        "warning": report.warning,
        "parameters": [
            {
                "name": name,
                "estimate": float(report.estimate.free_vector()[i]),
                "se": float(report.standard_errors[i]),
                "lower": float(report.ci_lower[i]),
                "upper": float(report.ci_upper[i]),
            }
            for i, name in enumerate(report.parameter_names)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_assignments_csv(assignment: ClusterAssignment, path) -> None:
    k = assignment.posteriors.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "label"] + [f"posterior_{a + 1}" for a in range(k)])
        for i in range(assignment.labels.size):
            writer.writerow([i, int(assignment.labels[i])]
                            + [_fmt(v) for v in assignment.posteriors[i]])


def save_trajectories_csv(traj: TrajectoryTable, path) -> None:
    k = traj.posteriors.shape[1]
    header = ["subject", "time", "label"] + [f"posterior_{a + 1}" for a in range(k)]
    if traj.annotations is not None:
        header.append("annotation")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(traj.labels.size):
            row = [str(traj.subject_ids[i]), int(traj.time_index[i]), int(traj.labels[i])]
            row += [_fmt(v) for v in traj.posteriors[i]]
            if traj.annotations is not None:
                row.append(str(traj.annotations[i]))
            writer.writerow(row)


def save_transitions_csv(matrix: TransitionMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["from_label", "to_label", "count", "probability", "uniform_fallback"])
        k = matrix.counts.shape[0]
        for a in range(k):
            for b in range(k):
                writer.writerow([
                    a + 1, b + 1, int(matrix.counts[a, b]),
                    _fmt(matrix.probabilities[a, b]), bool(matrix.uniform_rows[a]),
                ])


def save_selection_csv(report: SelectionReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "nu", "loglik", "aic", "bic", "converged", "failed"])
        for row in report.rows:
            writer.writerow([
                row.n_components, row.n_free, _fmt(row.log_likelihood),
                _fmt(row.aic), _fmt(row.bic), row.converged, row.failed,
            ])


def save_study_csv(report: StudyReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "n", "eta", "replicates", "bootstrap_b", "mse_theta_x100", "mse_beta_x100",
            "coverage_theta", "coverage_beta", "failed_fits",
        ])
        for cell in report.cells:
            writer.writerow([
                cell.n, cell.eta, cell.n_replicates, cell.bootstrap_b,
                _fmt(cell.mse_theta * 100), _fmt(cell.mse_beta * 100),
                _fmt(cell.coverage_theta), _fmt(cell.coverage_beta), cell.failed_fits,
            ])


def save_study_json(report: StudyReport, path) -> None:
    doc = {
        "seed": report.seed,
        "cells": [asdict(c) for c in report.cells],
        "replicates": list(report.detail),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
