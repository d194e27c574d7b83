"""Nested Monte Carlo EM for missing-at-random outcomes.

Each outer iteration imputes the missing cells M times from the current
parameters, stacks the completed copies, and runs the complete-data EM on the
stack warm-started at the current parameters (a single run; random restarts
live only at the outer level).  The outer loop stops when the free-parameter
L2 change drops below the tolerance, or when the observed log-likelihood has
oscillated within Monte Carlo noise for several consecutive iterations (the
stochastic E-step puts a noise floor under the achievable change).

With no missing cells the imputation step is a no-op and the whole procedure
reduces to the complete-data EM, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import rng as rng_mod
from .em import EmConfig, FitHistory, FitReport, fit_em, random_init
from .errors import DegenerateComponentError, ValidationError
from .imputation import impute_multiple
from .model import Dataset, ModelParams, li_log_likelihood, obs_log_likelihood
from .rng import seed_sequence

_STALL_LIMIT = 5


@dataclass(frozen=True)
class McemConfig:
    """Outer-loop settings wrapped around the complete-data EM config.

    ``max_inner_iterations`` optionally truncates each stacked-data M-step
    (a generalized-EM move: the warm-started inner sweeps still ascend, and
    the outer loop owns convergence).  ``None`` runs the inner EM to its own
    tolerance.
    """

    em: EmConfig
    n_imputations: int = 10
    max_outer_iterations: int = 100
    max_inner_iterations: int | None = None

    def __post_init__(self):
        if self.n_imputations < 1:
            raise ValidationError("n_imputations must be >= 1")
        if self.max_outer_iterations < 1:
            raise ValidationError("max_outer_iterations must be >= 1")
        if self.max_inner_iterations is not None and self.max_inner_iterations < 1:
            raise ValidationError("max_inner_iterations must be >= 1 when set")


def _mc_slack(copies, params: ModelParams) -> float:
    """3 * sd(per-copy log-likelihood contributions) / sqrt(M)."""
    if len(copies) < 2:
        return np.inf
    per_copy = np.array([li_log_likelihood(d, params) for d in copies])
    return float(3.0 * per_copy.std(ddof=1) / np.sqrt(len(copies)))


def _run_mcem(data: Dataset, config: McemConfig, init: ModelParams, run: int):
    inner_cfg = replace(config.em, record_history=False)
    if config.max_inner_iterations is not None:
        inner_cfg = replace(inner_cfg, max_iterations=config.max_inner_iterations)
    params = init
    history = None
    if config.em.record_history:
        start_ll = obs_log_likelihood(data, params)
        history = FitHistory(loglik=[start_ll], params=[params.free_vector()],
                             outer_loglik=[start_ll], outer_mc_slack=[])

    prev_obs = None
    stall = 0
    converged = False
    iterations = 0
    for t in range(config.max_outer_iterations):
        imputed = impute_multiple(
            data, params, config.n_imputations,
            seed=seed_sequence(config.em.seed, run, t),
        )
        inner = fit_em(imputed.stack(), inner_cfg, init=params)
        new_params = inner.params
        iterations += 1

        obs_ll = obs_log_likelihood(data, new_params)
        slack = _mc_slack(imputed.datasets, new_params)
        if history is not None:
            history.loglik.append(obs_ll)
            history.params.append(new_params.free_vector())
            history.outer_loglik.append(obs_ll)
            history.outer_mc_slack.append(slack)

        delta = float(np.linalg.norm(new_params.free_vector() - params.free_vector()))
        params = new_params
        if delta < config.em.tolerance:
            converged = True
            break
        if prev_obs is not None and abs(obs_ll - prev_obs) < slack:
            stall += 1
            if stall >= _STALL_LIMIT:
                converged = True  # at the Monte Carlo noise floor
                break
        else:
            stall = 0
        prev_obs = obs_ll

    return params, obs_log_likelihood(data, params), iterations, converged, history


def fit_mcem(data: Dataset, config: McemConfig, init: ModelParams | None = None) -> FitReport:
    """Fit under any missingness; the best run by observed log-likelihood wins.

    ``init`` given runs once from that point (the bootstrap path); otherwise
    the outer loop is restarted from ``config.em.n_random_inits`` random
    draws, run r imputing on streams ``(seed; r, t)``.
    """
    if data.is_complete:
        return fit_em(data, config.em, init)

    if init is not None:
        starts: list[ModelParams] = [init]
    else:
        starts = [
            random_init(config.em.n_components, data.n_covariates, data.n_outcomes,
                        rng_mod.stream(config.em.seed, r))
            for r in range(config.em.n_random_inits)
        ]

    init_logliks = np.full(len(starts), -np.inf)
    best = None
    for r, start in enumerate(starts):
        try:
            result = _run_mcem(data, config, start, r)
        except DegenerateComponentError:
            continue
        init_logliks[r] = result[1]
        if best is None or result[1] > best[1]:
            best = result

    if best is None:
        raise DegenerateComponentError("every outer run lost a component")
    params, loglik, iterations, converged, history = best
    return FitReport(
        params=params,
        log_likelihood=loglik,
        iterations=iterations,
        converged=converged,
        init_log_likelihoods=init_logliks,
        history=history,
    )
