"""EM for the mixture on complete data.

One sweep computes the posterior component weights at the current parameters,
re-estimates every success probability as the posterior-weighted sample
proportion, and refits the gating coefficients against the posterior matrix
(warm-started from the current coefficients).  The run stops when the L2
change of the free-parameter vector drops below the tolerance.

Random restarts draw intercepts from U[-1, 1], slopes from U[-0.5, 0.5], and
success probabilities from U[0.1, 0.9], each restart on its own RNG stream
``(seed; run)`` so the multi-start protocol is deterministic and order
independent.  The best run by final log-likelihood wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rng_mod
from .errors import DegenerateComponentError, ValidationError
from .gating import OptimizerConfig, fit_weighted_logistic
from .model import (
    Dataset,
    ModelParams,
    OutcomeSpec,
    _check_shapes,
    _lse_rows,
    clamp_theta,
    component_log_density_matrix,
    design_matrix,
    log_gating_matrix,
)

_DEGENERATE_WEIGHT = 1e-8


@dataclass(frozen=True)
class EmConfig:
    """Settings for a complete-data fit."""

    n_components: int
    tolerance: float = 1e-4
    max_iterations: int = 500
    n_random_inits: int = 20
    seed: int = 0
    gating: OptimizerConfig = field(default_factory=OptimizerConfig)
    record_history: bool = False

    def __post_init__(self):
        if self.n_components < 1:
            raise ValidationError("n_components must be >= 1")
        if self.tolerance <= 0:
            raise ValidationError("tolerance must be positive")
        if self.max_iterations < 1 or self.n_random_inits < 1:
            raise ValidationError("max_iterations and n_random_inits must be >= 1")


@dataclass
class FitHistory:
    """Per-iteration trace of the winning run (kept only on request)."""

    loglik: list[float] = field(default_factory=list)
    params: list[np.ndarray] = field(default_factory=list)
    outer_loglik: list[float] | None = None
    outer_mc_slack: list[float] | None = None


@dataclass
class FitReport:
    params: ModelParams
    log_likelihood: float
    iterations: int
    converged: bool
    init_log_likelihoods: np.ndarray
    history: FitHistory | None = None


def posterior_weights(data: Dataset, params: ModelParams) -> np.ndarray:
    """n x K membership probabilities given complete rows (Bayes rule in log space)."""
    _check_shapes(data, params)
    if not data.is_complete:
        raise ValidationError("posterior_weights needs complete data")
    logw = log_gating_matrix(design_matrix(data.covariates), params.beta)
    logpost = logw + component_log_density_matrix(data, params, observed_only=False)
    logpost -= _lse_rows(logpost)[:, None]
    return np.exp(logpost)


def update_theta(data: Dataset, posteriors: np.ndarray, spec: OutcomeSpec) -> np.ndarray:
    """Posterior-weighted sample proportions, clamped into the open interval."""
    pi = np.asarray(posteriors, dtype=float)
    if pi.shape[0] != data.n:
        raise ValidationError("posterior matrix disagrees with the data on rows")
    if (pi < 0).any() or np.abs(pi.sum(axis=1) - 1.0).max() > 1e-8:
        raise ValidationError("posterior rows must lie on the probability simplex")
    totals = pi.sum(axis=0)
    if (totals < _DEGENERATE_WEIGHT).any():
        k = int(np.argmin(totals))
        raise DegenerateComponentError(f"component {k} has total posterior weight {totals[k]:.3e}")
    proportions = data.outcomes / spec.maxima[None, :]
    return clamp_theta((pi.T @ proportions) / totals[:, None])


def random_init(n_components: int, n_covariates: int, n_outcomes: int,
                rng: np.random.Generator) -> ModelParams:
    """One random restart; draw order is fixed for reproducibility."""
    beta = np.zeros((n_components, n_covariates + 1))
    for k in range(1, n_components):
        beta[k, 0] = rng.uniform(-1.0, 1.0)
        beta[k, 1:] = rng.uniform(-0.5, 0.5, size=n_covariates)
    theta = rng.uniform(0.1, 0.9, size=(n_components, n_outcomes))
    return ModelParams(beta=beta, theta=theta)


def _run_em(data: Dataset, config: EmConfig, init: ModelParams):
    """One EM run; returns (params, loglik, iterations, converged, history)."""
    design = design_matrix(data.covariates)
    params = init
    history = FitHistory() if config.record_history else None
    converged = False
    iterations = 0

    for _ in range(config.max_iterations):
        logw = log_gating_matrix(design, params.beta)
        logpost = logw + component_log_density_matrix(data, params, observed_only=False)
        row_lse = _lse_rows(logpost)
        if history is not None:
            history.loglik.append(float(row_lse.sum()))
            history.params.append(params.free_vector())
        pi = np.exp(logpost - row_lse[:, None])

        theta = update_theta(data, pi, data.spec)
        beta = fit_weighted_logistic(data.covariates, pi, params.beta, config.gating)
        new_params = ModelParams(beta=beta, theta=theta)
        iterations += 1

        delta = float(np.linalg.norm(new_params.free_vector() - params.free_vector()))
        params = new_params
        if delta < config.tolerance:
            converged = True
            break

    logw = log_gating_matrix(design, params.beta)
    final_loglik = float(_lse_rows(logw + component_log_density_matrix(
        data, params, observed_only=False)).sum())
    if history is not None:
        history.loglik.append(final_loglik)
        history.params.append(params.free_vector())
    return params, final_loglik, iterations, converged, history


def fit_em(data: Dataset, config: EmConfig, init: ModelParams | None = None) -> FitReport:
    """Fit the mixture on complete data.

    With ``init`` given, runs once from that point; otherwise runs
    ``config.n_random_inits`` random restarts and keeps the best final
    log-likelihood.  Restarts that lose a component are recorded as ``-inf``
    and skipped.
    """
    if not data.is_complete:
        raise ValidationError("fit_em needs complete data; use fit_mcem under missingness")

    if init is not None:
        starts: list[ModelParams | None] = [init]
    else:
        starts = [
            random_init(config.n_components, data.n_covariates, data.n_outcomes,
                        rng_mod.stream(config.seed, run))
            for run in range(config.n_random_inits)
        ]

    init_logliks = np.full(len(starts), -np.inf)
    best = None
    for run, start in enumerate(starts):
        try:
            result = _run_em(data, config, start)
        except DegenerateComponentError:
            continue
        init_logliks[run] = result[1]
        if best is None or result[1] > best[1]:
            best = result

    if best is None:
        raise DegenerateComponentError("every EM run lost a component; data may be too sparse")
    params, loglik, iterations, converged, history = best
    return FitReport(
        params=params,
        log_likelihood=loglik,
        iterations=iterations,
        converged=converged,
        init_log_likelihoods=init_logliks,
        history=history,
    )


def single_init_config(config: EmConfig) -> EmConfig:
    """Variant used where a caller supplies the starting point."""
    return replace(config, n_random_inits=1)
