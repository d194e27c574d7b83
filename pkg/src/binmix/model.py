"""Model core: densities, gating weights, and log-likelihoods.

The model is a K-component mixture over d bounded integer outcomes.  Component
k places a product of independent binomials on the outcome vector,

    p_k(y) = prod_j C(N_j, y_j) * theta[k,j]^y_j * (1-theta[k,j])^(N_j-y_j),

and the mixture weights are a softmax of a linear function of the covariates
with component 0 pinned as the reference class (its coefficient row is zero).
Everything here is computed and accumulated in log space; probabilities are
only materialized where sampling needs them.

Conventions
-----------
- Component indices in function arguments are 0-based.  Cluster *labels*
  exposed to users (see :mod:`binmix.clustering`) are 1-based.
- Missing outcome cells are carried as a per-cell observed flag; the stored
  integer under a missing flag is 0 and is never read.
- ``theta`` entries are clamped to ``[THETA_MIN, 1 - THETA_MIN]`` at
  construction so log-pmfs stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ValidationError

THETA_MIN = 1e-6


def clamp_theta(theta: np.ndarray) -> np.ndarray:
    """Clamp success probabilities away from {0, 1}."""
    return np.clip(theta, THETA_MIN, 1.0 - THETA_MIN)


# ---------------------------------------------------------------------------
# Numerically stable primitives
# ---------------------------------------------------------------------------

def log_sum_exp(values) -> float:
    """log(sum(exp(values))) with the max shifted out.

    Exact when all entries are equal; tolerates -inf entries as long as at
    least one entry is finite.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("log_sum_exp requires a nonempty 1-D input")
    if np.isnan(v).any():
        raise ValidationError("log_sum_exp input contains NaN")
    m = np.max(v)
    if m == -np.inf:
        raise ValidationError("log_sum_exp input is identically -inf")
    return float(m + np.log(np.sum(np.exp(v - m))))


def _lse_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise logsumexp for a finite 2-D array (hot path, no validation)."""
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def binomial_log_pmf(y: int, n_max: int, theta: float) -> float:
    """log C(n_max, y) + y*log(theta) + (n_max-y)*log(1-theta).

    The log-binomial coefficient is computed through log-gamma.
    """
    if not 0 <= y <= n_max:
        raise ValidationError(f"outcome {y} outside [0, {n_max}]")
    if not 0.0 < theta < 1.0:
        raise ValidationError(f"success probability {theta} outside (0, 1)")
    log_coef = math.lgamma(n_max + 1) - math.lgamma(y + 1) - math.lgamma(n_max - y + 1)
    return log_coef + y * math.log(theta) + (n_max - y) * math.log1p(-theta)


def param_count(n_components: int, n_covariates: int, n_outcomes: int) -> int:
    """Number of free parameters: K(p+d+1) - p - 1."""
    if n_components < 1 or n_covariates < 0 or n_outcomes < 1:
        raise ValidationError("need n_components >= 1, n_covariates >= 0, n_outcomes >= 1")
    return n_components * (n_covariates + n_outcomes + 1) - n_covariates - 1


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutcomeSpec:
    """Score ceilings N_j for the d outcome coordinates."""

    maxima: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.maxima, dtype=np.int64)
        if m.ndim != 1 or m.size < 1:
            raise ValidationError("maxima must be a nonempty 1-D integer vector")
        if (m < 1).any():
            raise ValidationError("every outcome maximum must be >= 1")
        object.__setattr__(self, "maxima", m)

    @property
    def n_outcomes(self) -> int:
        return int(self.maxima.size)

    @cached_property
    def log_choose(self) -> tuple[np.ndarray, ...]:
        """Per-coordinate lookup tables log C(N_j, y), y = 0..N_j."""
        tables = []
        for n_max in self.maxima:
            ys = np.arange(n_max + 1)
            lg = np.vectorize(math.lgamma)
            tables.append(lg(n_max + 1) - lg(ys + 1) - lg(n_max - ys + 1))
        return tuple(tables)


@dataclass(frozen=True)
class ModelParams:
    """Gating coefficients (K x (p+1), row 0 pinned to zero) and success
    probabilities (K x d, clamped into the open unit interval)."""

    beta: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        theta = np.array(self.theta, dtype=float)
        if beta.ndim != 2 or theta.ndim != 2:
            raise ValidationError("beta and theta must be 2-D")
        if beta.shape[0] != theta.shape[0]:
            raise ValidationError("beta and theta disagree on the component count")
        if beta.shape[1] < 1:
            raise ValidationError("beta needs at least the intercept column")
        if not np.isfinite(beta).all() or not np.isfinite(theta).all():
            raise ValidationError("parameters must be finite")
        if np.any(beta[0] != 0.0):
            raise ValidationError("reference class: beta row 0 must be identically zero")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", clamp_theta(theta))

    @property
    def n_components(self) -> int:
        return int(self.beta.shape[0])

    @property
    def n_covariates(self) -> int:
        return int(self.beta.shape[1] - 1)

    @property
    def n_outcomes(self) -> int:
        return int(self.theta.shape[1])

    @property
    def n_free(self) -> int:
        return param_count(self.n_components, self.n_covariates, self.n_outcomes)

    def free_vector(self) -> np.ndarray:
        """Pack the free parameters: beta rows 1..K-1 row-major, then theta."""
        return np.concatenate([self.beta[1:].ravel(), self.theta.ravel()])

    @staticmethod
    def from_free_vector(vec: np.ndarray, n_components: int, n_covariates: int,
                         n_outcomes: int) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        expected = param_count(n_components, n_covariates, n_outcomes)
        if vec.shape != (expected,):
            raise ValidationError(f"free vector must have length {expected}")
        n_beta = (n_components - 1) * (n_covariates + 1)
        beta = np.zeros((n_components, n_covariates + 1))
        beta[1:] = vec[:n_beta].reshape(n_components - 1, n_covariates + 1)
        theta = vec[n_beta:].reshape(n_components, n_outcomes)
        return ModelParams(beta=beta, theta=theta)

    def free_parameter_names(self) -> list[str]:
        """Names aligned with :meth:`free_vector`; classes are 1-based, the
        intercept is covariate index 0."""
        names = []
        for k in range(1, self.n_components):
            for c in range(self.n_covariates + 1):
                names.append(f"beta_{k + 1}_{c}")
        for k in range(self.n_components):
            for j in range(self.n_outcomes):
                names.append(f"theta_{k + 1}_{j + 1}")
        return names


def reorder_components(params: ModelParams, order) -> ModelParams:
    """Relabel components so new index i is old index order[i].

    The gating rows are re-pinned by subtracting the new reference row, which
    leaves every mixture weight unchanged.
    """
    order = np.asarray(order, dtype=int)
    if sorted(order.tolist()) != list(range(params.n_components)):
        raise ValidationError("order must be a permutation of the component indices")
    beta = params.beta[order]
    beta = beta - beta[0]
    return ModelParams(beta=beta, theta=params.theta[order])


def severity_order(params: ModelParams) -> np.ndarray:
    """Component order by descending mean success probability.

    Intended for reporting: with higher-is-better scores this lists the
    healthiest profile first.  Fitting never relabels.
    """
    return np.argsort(-params.theta.mean(axis=1), kind="stable")


@dataclass(frozen=True)
class MissingPattern:
    """Binary observation pattern for one row: bit j is 1 iff Y_j is present."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) == 0 or any(b not in (0, 1) for b in bits):
            raise ValidationError("pattern bits must be a nonempty 0/1 vector")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_string(cls, s: str) -> "MissingPattern":
        return cls(tuple(int(c) for c in s))

    @classmethod
    def from_observed_row(cls, observed) -> "MissingPattern":
        return cls(tuple(int(b) for b in np.asarray(observed).astype(bool)))

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def observed_indices(self) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.bits))

    @property
    def missing_indices(self) -> np.ndarray:
        return np.flatnonzero(~np.asarray(self.bits, dtype=bool))

    @property
    def n_observed(self) -> int:
        return int(sum(self.bits))

    @property
    def all_observed(self) -> bool:
        return all(b == 1 for b in self.bits)

    @property
    def none_observed(self) -> bool:
        return all(b == 0 for b in self.bits)


@dataclass(frozen=True)
class Dataset:
    """Covariates, bounded integer outcomes, and per-cell observation flags.

    Covariates are never missing.  ``outcomes`` stores 0 under missing cells;
    those entries are masked out of every computation.
    """

    covariates: np.ndarray
    outcomes: np.ndarray
    spec: OutcomeSpec
    observed: np.ndarray | None = None

    def __post_init__(self):
        x = np.array(self.covariates, dtype=float)
        y = np.array(self.outcomes)
        if x.ndim != 2:
            raise ValidationError("covariates must be an n x p matrix")
        if y.ndim != 2:
            raise ValidationError("outcomes must be an n x d matrix")
        n = x.shape[0]
        if n < 1:
            raise ValidationError("dataset needs at least one row")
        if y.shape[0] != n:
            raise ValidationError("covariates and outcomes disagree on the row count")
        if y.shape[1] != self.spec.n_outcomes:
            raise ValidationError("outcomes disagree with the outcome spec on d")
        if not np.isfinite(x).all():
            raise ValidationError("covariates must be fully observed and finite")

        if self.observed is None:
            if np.issubdtype(y.dtype, np.floating):
                mask = ~np.isnan(y)
            else:
                mask = np.ones_like(y, dtype=bool)
        else:
            mask = np.array(self.observed, dtype=bool)
            if mask.shape != y.shape:
                raise ValidationError("observed mask must match the outcome shape")

        if np.issubdtype(y.dtype, np.floating):
            present = y[mask]
            if present.size and np.any(present != np.round(present)):
                raise ValidationError("observed outcomes must be integers")
            y = np.where(mask, np.nan_to_num(y, nan=0.0), 0.0)
        y = np.where(mask, y, 0).astype(np.int64)

        lo_bad = (y < 0) & mask
        hi_bad = (y > self.spec.maxima[None, :]) & mask
        if lo_bad.any() or hi_bad.any():
            i, j = np.argwhere(lo_bad | hi_bad)[0]
            raise ValidationError(
                f"outcome at row {i}, column {j} is {y[i, j]}, outside [0, {self.spec.maxima[j]}]"
            )

        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "observed", mask)

    @property
    def n(self) -> int:
        return int(self.covariates.shape[0])

    @property
    def n_covariates(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def n_outcomes(self) -> int:
        return self.spec.n_outcomes

    @property
    def is_complete(self) -> bool:
        return bool(self.observed.all())

    @property
    def n_missing_cells(self) -> int:
        return int((~self.observed).sum())

    def pattern(self, i: int) -> MissingPattern:
        return MissingPattern.from_observed_row(self.observed[i])

    @cached_property
    def pattern_groups(self) -> dict[tuple[int, ...], np.ndarray]:
        """Row indices grouped by missing pattern (cached once per dataset)."""
        groups: dict[tuple[int, ...], list[int]] = {}
        for i, row in enumerate(self.observed):
            groups.setdefault(tuple(int(b) for b in row), []).append(i)
        return {k: np.asarray(v) for k, v in groups.items()}

    @cached_property
    def rows_with_missing(self) -> np.ndarray:
        return np.flatnonzero(~self.observed.all(axis=1))

    def take(self, indices) -> "Dataset":
        """Row subset/resample (used by the bootstrap)."""
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            covariates=self.covariates[idx],
            outcomes=self.outcomes[idx],
            spec=self.spec,
            observed=self.observed[idx],
        )

    def completed(self, outcomes: np.ndarray) -> "Dataset":
        """Same covariates with fully observed outcomes (used by imputation)."""
        return Dataset(covariates=self.covariates, outcomes=outcomes, spec=self.spec,
                       observed=np.ones_like(self.observed))


# ---------------------------------------------------------------------------
# Vectorized internals shared by the EM/imputation/clustering layers
# ---------------------------------------------------------------------------

def design_matrix(x: np.ndarray) -> np.ndarray:
    """Prepend the intercept column."""
    x = np.asarray(x, dtype=float)
    return np.hstack([np.ones((x.shape[0], 1)), x])


def log_gating_matrix(design: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """n x K log mixture weights from the linear scores."""
    logits = design @ beta.T
    return logits - _lse_rows(logits)[:, None]


def log_pmf_tables(spec: OutcomeSpec, theta: np.ndarray) -> list[np.ndarray]:
    """Per-coordinate (N_j+1) x K tables of binomial log-pmfs at ``theta``."""
    log_t = np.log(theta)
    log_1mt = np.log1p(-theta)
    tables = []
    for j, n_max in enumerate(spec.maxima):
        ys = np.arange(n_max + 1, dtype=float)
        tables.append(
            spec.log_choose[j][:, None]
            + ys[:, None] * log_t[None, :, j]
            + (n_max - ys)[:, None] * log_1mt[None, :, j]
        )
    return tables


def component_log_density_matrix(data: Dataset, params: ModelParams,
                                 observed_only: bool = True) -> np.ndarray:
    """n x K matrix of per-component outcome log-densities.

    With ``observed_only`` each row sums the log-pmfs over its observed
    coordinates (an all-missing row contributes an empty product, i.e. 0);
    otherwise all coordinates are used and the data must be complete.
    """
    tables = log_pmf_tables(data.spec, params.theta)
    acc = np.zeros((data.n, params.n_components))
    for j in range(data.n_outcomes):
        contrib = tables[j][data.outcomes[:, j]]
        if observed_only:
            acc += np.where(data.observed[:, j, None], contrib, 0.0)
        else:
            acc += contrib
    return acc


def _check_shapes(data: Dataset, params: ModelParams) -> None:
    if params.n_covariates != data.n_covariates:
        raise ValidationError("params and data disagree on the covariate dimension")
    if params.n_outcomes != data.n_outcomes:
        raise ValidationError("params and data disagree on the outcome dimension")


# ---------------------------------------------------------------------------
# Public model operations
# ---------------------------------------------------------------------------

def gating_weights(x, params: ModelParams) -> np.ndarray:
    """Softmax class probabilities for one covariate vector."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (params.n_covariates,):
        raise ValidationError(f"covariate vector must have length {params.n_covariates}")
    logits = params.beta @ np.concatenate([[1.0], x])
    return np.exp(logits - log_sum_exp(logits))


def component_log_density(y, params: ModelParams, k: int, spec: OutcomeSpec) -> float:
    """Log-density of a complete outcome vector under component k (0-based)."""
    y = np.asarray(y)
    if y.shape != (spec.n_outcomes,):
        raise ValidationError(f"outcome vector must have length {spec.n_outcomes}")
    if not 0 <= k < params.n_components:
        raise ValidationError(f"component index {k} out of range")
    return float(sum(
        binomial_log_pmf(int(y[j]), int(spec.maxima[j]), float(params.theta[k, j]))
        for j in range(spec.n_outcomes)
    ))

def pattern_log_density(y_obs, pattern: MissingPattern, params: ModelParams,
                        k: int, spec: OutcomeSpec) -> float:
    """Log-density of the observed coordinates only (empty pattern gives 0)."""
    y_obs = np.atleast_1d(np.asarray(y_obs))
    if len(pattern) != spec.n_outcomes:
        raise ValidationError("pattern length must equal the outcome dimension")
    obs = pattern.observed_indices
    if y_obs.shape != (obs.size,):
        raise ValidationError("observed values disagree with the pattern's observed slots")
    if not 0 <= k < params.n_components:
        raise ValidationError(f"component index {k} out of range")
    return float(sum(
        binomial_log_pmf(int(y_obs[a]), int(spec.maxima[j]), float(params.theta[k, j]))
        for a, j in enumerate(obs)
    ))


def li_log_likelihood(data: Dataset, params: ModelParams) -> float:
    """Mixture log-likelihood on complete data: sum_i log sum_k w_k p_k."""
    _check_shapes(data, params)
    if not data.is_complete:
        raise ValidationError("data has missing outcomes; use obs_log_likelihood")
    logw = log_gating_matrix(design_matrix(data.covariates), params.beta)
    dens = component_log_density_matrix(data, params, observed_only=False)
    return float(_lse_rows(logw + dens).sum())


def obs_log_likelihood(data: Dataset, params: ModelParams) -> float:
    """Observed-data log-likelihood: each row uses its observed coordinates.

    Coincides with :func:`li_log_likelihood` on complete data; an all-missing
    row contributes log of the gating-weight sum, i.e. zero.
    """
    _check_shapes(data, params)
    logw = log_gating_matrix(design_matrix(data.covariates), params.beta)
    dens = component_log_density_matrix(data, params, observed_only=True)
    return float(_lse_rows(logw + dens).sum())


def observed_posterior_matrix(data: Dataset, params: ModelParams) -> np.ndarray:
    """n x K membership probabilities given each row's observed coordinates.

    Rows with nothing observed fall back to the gating weights.  These are
    also the component weights of the conditional (imputation) mixture.
    """
    _check_shapes(data, params)
    logw = log_gating_matrix(design_matrix(data.covariates), params.beta)
    logpost = logw + component_log_density_matrix(data, params, observed_only=True)
    logpost -= _lse_rows(logpost)[:, None]
    return np.exp(logpost)
