"""Multiple imputation of missing outcomes under missing-at-random.

Conditioning a mixture of binomial products on the observed coordinates of a
row leaves another mixture of binomial products: the component weights get
reweighted by the observed-coordinate densities and the missing coordinates
keep their original success probabilities.  Imputation therefore draws a
component from those weights and then each missing cell from its binomial.

Draws are reproducible and order independent: copy ``m`` of row ``i`` uses
the RNG stream ``(seed; m, i)``, and within a row the draw order is the
component first, then the missing coordinates ascending.  Binomial sampling
inverts the CDF directly (score ceilings are a few hundred at most), which is
exact and avoids platform-dependent rejection samplers.
"""

from __future__ import annotations

from dataclasses import dataclass

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
from .rng import SeedLike, stream


@dataclass(frozen=True)
class ConditionalMixture:
    """Distribution of a row's missing coordinates given its observed ones."""

    weights: np.ndarray
    theta: np.ndarray
    maxima: np.ndarray
    missing_indices: np.ndarray


@dataclass(frozen=True)
class ImputedDatasetSet:
    """M completed copies sharing covariates and observed cells."""

    datasets: tuple[Dataset, ...]
    seed: SeedLike

    def __len__(self) -> int:
        return len(self.datasets)

    def stack(self) -> Dataset:
        """Concatenate the copies row-wise (copy 0 first)."""
        first = self.datasets[0]
        return Dataset(
            covariates=np.vstack([d.covariates for d in self.datasets]),
            outcomes=np.vstack([d.outcomes for d in self.datasets]),
            spec=first.spec,
        )


def conditional_mixture(x, y_obs, pattern: MissingPattern, params: ModelParams,
                        spec: OutcomeSpec) -> ConditionalMixture:
    """Conditional mixture for one row; errors when nothing is missing."""
    if pattern.all_observed:
        raise ValidationError("pattern is fully observed; nothing to impute")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (params.n_covariates,):
        raise ValidationError(f"covariate vector must have length {params.n_covariates}")
    logits = params.beta @ np.concatenate([[1.0], x])
    log_w = logits - log_sum_exp(logits)
    log_num = np.array([
        log_w[k] + pattern_log_density(y_obs, pattern, params, k, spec)
        for k in range(params.n_components)
    ])
    weights = np.exp(log_num - log_sum_exp(log_num))
    miss = pattern.missing_indices
    return ConditionalMixture(
        weights=weights,
        theta=params.theta[:, miss],
        maxima=spec.maxima[miss],
        missing_indices=miss,
    )


def _binomial_inverse_cdf(u: float, n_max: int, theta: float) -> int:
    """Smallest y with CDF(y) >= u; flips to the complement when theta > 1/2
    so the running pmf never underflows."""
    if theta > 0.5:
        return n_max - _binomial_inverse_cdf(u, n_max, 1.0 - theta)
    odds = theta / (1.0 - theta)
    pmf = (1.0 - theta) ** n_max
    cdf = pmf
    y = 0
    while u > cdf and y < n_max:
        y += 1
        pmf *= odds * (n_max - y + 1) / y
        cdf += pmf
    return y


def _impute_with_weights(data: Dataset, params: ModelParams, weights: np.ndarray,
                         seed: SeedLike, copy: int) -> Dataset:
    outcomes = data.outcomes.copy()
    maxima = data.spec.maxima
    for i in data.rows_with_missing:
        rng = stream(seed, copy, int(i))
        cum = np.cumsum(weights[i])
        z = int(np.searchsorted(cum, rng.random() * cum[-1], side="left"))
        z = min(z, params.n_components - 1)
        for j in np.flatnonzero(~data.observed[i]):
            outcomes[i, j] = _binomial_inverse_cdf(
                rng.random(), int(maxima[j]), float(params.theta[z, j])
            )
    return data.completed(outcomes)


def impute_once(data: Dataset, params: ModelParams, seed: SeedLike, copy: int = 0) -> Dataset:
    """One completed copy of the dataset; fully observed rows pass through."""
    if data.is_complete:
        return data
    weights = observed_posterior_matrix(data, params)
    return _impute_with_weights(data, params, weights, seed, copy)


def impute_multiple(data: Dataset, params: ModelParams, n_copies: int,
                    seed: SeedLike) -> ImputedDatasetSet:
    """M independent completed copies; copy m matches ``impute_once(..., copy=m)``.

    The conditional-mixture weights are computed once and shared across the
    copies (they do not depend on the draws).
    """
    if n_copies < 1:
        raise ValidationError("the number of imputations must be >= 1")
    if data.is_complete:
        return ImputedDatasetSet(datasets=tuple([data] * n_copies), seed=seed)
    weights = observed_posterior_matrix(data, params)
    copies = tuple(
        _impute_with_weights(data, params, weights, seed, m) for m in range(n_copies)
    )
    return ImputedDatasetSet(datasets=copies, seed=seed)
