"""Shared oracles and fixtures.

Oracle helpers deliberately avoid the package's log-space code paths: they
use scipy.stats.binom and plain exponentiate-and-normalize arithmetic so the
tests check the implementation against an independent route.
"""

import itertools

import numpy as np
import pytest
from scipy import stats

from binmix import Dataset, ModelParams, OutcomeSpec


def naive_gating(x, beta):
    """Brute-force softmax over exp(beta @ (1, x))."""
    scores = np.exp(beta @ np.concatenate([[1.0], np.atleast_1d(x)]))
    return scores / scores.sum()


def naive_component_pmf(y, theta_row, maxima):
    """Product of scipy binomial pmfs."""
    return float(np.prod([
        stats.binom.pmf(y[j], maxima[j], theta_row[j]) for j in range(len(maxima))
    ]))


def naive_mixture_density(x, y, params, spec):
    w = naive_gating(x, params.beta)
    return float(sum(
        w[k] * naive_component_pmf(y, params.theta[k], spec.maxima)
        for k in range(params.n_components)
    ))


def naive_obs_density(x, y_obs_full, observed_row, params, spec):
    """Marginalize the complete-data mixture over every missing-cell grid."""
    missing = np.flatnonzero(~observed_row)
    total = 0.0
    for combo in itertools.product(*[range(spec.maxima[j] + 1) for j in missing]):
        y = np.array(y_obs_full)
        y[missing] = combo
        total += naive_mixture_density(x, y, params, spec)
    return total


def random_params(rng, k, p, d):
    beta = np.zeros((k, p + 1))
    beta[1:] = rng.uniform(-1.0, 1.0, size=(k - 1, p + 1))
    theta = rng.uniform(0.15, 0.85, size=(k, d))
    return ModelParams(beta=beta, theta=theta)


def random_dataset(rng, n, p, d, maxima, missing_frac=0.0):
    spec = OutcomeSpec(maxima=np.asarray(maxima))
    x = rng.normal(size=(n, p))
    y = rng.integers(0, np.asarray(maxima) + 1, size=(n, d))
    observed = rng.random((n, d)) >= missing_frac
    return Dataset(covariates=x, outcomes=y, spec=spec, observed=observed)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
