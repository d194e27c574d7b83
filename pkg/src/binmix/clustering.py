"""Posterior-based clustering, latent trajectories, and transition matrices.

Cluster labels are 1-based: row i gets label argmax_k of its membership
probability given whatever it has observed (ties break toward the lowest
component index, which is what ``argmax`` does).  A fully observed row uses
the complete-data posterior; a fully missing row falls back to the gating
weights.

For longitudinal data the same posterior is evaluated per (subject, time)
record against the subject's baseline covariates, giving a latent trajectory;
transition matrices count label moves between two time points, optionally
restricted to a stratum.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ValidationError
from .model import (
    Dataset,
    MissingPattern,
    ModelParams,
    OutcomeSpec,
    log_sum_exp,
    observed_posterior_matrix,
    pattern_log_density,
)


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    posteriors: np.ndarray


@dataclass(frozen=True)
class Panel:
    """Long-format records: one dataset row per (subject, time) visit.

    Baseline covariates must repeat unchanged across a subject's visits.
    ``annotations`` is a free-form per-record column carried through to the
    trajectory output (e.g. an external severity score).
    """

    data: Dataset
    subject_ids: np.ndarray
    time_index: np.ndarray
    annotations: np.ndarray | None = None

    def __post_init__(self):
        subjects = np.asarray(self.subject_ids)
        times = np.asarray(self.time_index, dtype=np.int64)
        if subjects.shape != (self.data.n,) or times.shape != (self.data.n,):
            raise ValidationError("subject and time columns must align with the data rows")
        pairs = list(zip(subjects.tolist(), times.tolist()))
        if len(set(pairs)) != len(pairs):
            dup = next(p for p in pairs if pairs.count(p) > 1)
            raise ValidationError(f"duplicated (subject, time) record: {dup}")
        for sid in set(subjects.tolist()):
            rows = np.flatnonzero(subjects == sid)
            base = self.data.covariates[rows[0]]
            if not np.all(self.data.covariates[rows] == base):
                raise ValidationError(f"covariates vary within subject {sid!r}")
        if self.annotations is not None and np.asarray(self.annotations).shape != (self.data.n,):
            raise ValidationError("annotations must align with the data rows")
        object.__setattr__(self, "subject_ids", subjects)
        object.__setattr__(self, "time_index", times)


@dataclass(frozen=True)
class TrajectoryTable:
    subject_ids: np.ndarray
    time_index: np.ndarray
    labels: np.ndarray
    posteriors: np.ndarray
    annotations: np.ndarray | None = None

    @cached_property
    def _index(self) -> dict[tuple, int]:
        return {
            (s, int(t)): i
            for i, (s, t) in enumerate(zip(self.subject_ids.tolist(), self.time_index.tolist()))
        }

    def row_at(self, subject, time: int) -> int | None:
        return self._index.get((subject, int(time)))


@dataclass(frozen=True)
class TransitionMatrix:
    counts: np.ndarray
    probabilities: np.ndarray
    uniform_rows: np.ndarray
    from_time: int
    to_time: int
    n_subjects: int


def posterior_with_missing(x, y_obs, pattern: MissingPattern, params: ModelParams,
                           spec: OutcomeSpec) -> np.ndarray:
    """Membership probabilities for one row given its observed coordinates."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (params.n_covariates,):
        raise ValidationError(f"covariate vector must have length {params.n_covariates}")
    logits = params.beta @ np.concatenate([[1.0], x])
    log_w = logits - log_sum_exp(logits)
    log_num = np.array([
        log_w[k] + pattern_log_density(y_obs, pattern, params, k, spec)
        for k in range(params.n_components)
    ])
    return np.exp(log_num - log_sum_exp(log_num))


def assign_clusters(data: Dataset, params: ModelParams) -> ClusterAssignment:
    """Label every row with its most probable component (1-based)."""
    posteriors = observed_posterior_matrix(data, params)
    return ClusterAssignment(labels=posteriors.argmax(axis=1) + 1, posteriors=posteriors)


def build_trajectories(panel: Panel, params: ModelParams) -> TrajectoryTable:
    """Per-(subject, time) posteriors and labels from the fitted model."""
    assignment = assign_clusters(panel.data, params)
    return TrajectoryTable(
        subject_ids=panel.subject_ids,
        time_index=panel.time_index,
        labels=assignment.labels,
        posteriors=assignment.posteriors,
        annotations=panel.annotations,
    )


def transition_matrix(traj: TrajectoryTable, from_time: int, to_time: int,
                      stratum: np.ndarray | None = None) -> TransitionMatrix:
    """Row-normalized label-move counts between two time points.

    ``stratum`` is an optional boolean mask over trajectory rows; a subject is
    included when its ``from_time`` record passes the mask.  Rows of the count
    matrix with no subjects are emitted as uniform and flagged.
    """
    n_components = traj.posteriors.shape[1]
    if stratum is not None:
        stratum = np.asarray(stratum, dtype=bool)
        if stratum.shape != traj.labels.shape:
            raise ValidationError("stratum mask must align with the trajectory rows")

    counts = np.zeros((n_components, n_components), dtype=np.int64)
    n_subjects = 0
    for subject in dict.fromkeys(traj.subject_ids.tolist()):
        i_from = traj.row_at(subject, from_time)
        i_to = traj.row_at(subject, to_time)
        if i_from is None or i_to is None:
            continue
        if stratum is not None and not stratum[i_from]:
            continue
        counts[traj.labels[i_from] - 1, traj.labels[i_to] - 1] += 1
        n_subjects += 1
    if n_subjects == 0:
        raise ValidationError("no subjects present at both time points in the stratum")

    totals = counts.sum(axis=1)
    uniform_rows = totals == 0
    probabilities = np.where(
        uniform_rows[:, None],
        1.0 / n_components,
        counts / np.where(totals == 0, 1, totals)[:, None],
    )
    return TransitionMatrix(
        counts=counts,
        probabilities=probabilities,
        uniform_rows=uniform_rows,
        from_time=int(from_time),
        to_time=int(to_time),
        n_subjects=n_subjects,
    )
