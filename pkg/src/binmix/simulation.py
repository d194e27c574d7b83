"""Synthetic data generation, MAR selection mechanisms, and the study harness.

The built-in benchmark draws 2 Gaussian covariates, gates 3 components whose
success-probability rows sit at 0.8/0.5/0.1 across 4 outcomes, and masks
outcomes through per-pattern logistic selection models whose intercepts are
shifted by a dial ``eta``: large eta means few missing rows, ``eta = inf``
means none.  Every pattern's logit reads only covariates and the coordinates
observed under that pattern, so the mechanism is missing-at-random by
construction.

``run_study`` wires the pieces into an evaluation grid over (n, eta):
simulate, mask, fit, score the summed per-component L2 parameter errors, and
(optionally) bootstrap each replicate to measure empirical CI coverage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import expit

from .errors import GenerationError, ValidationError
from .inference import bootstrap
from .mcem import McemConfig, fit_mcem
from .model import Dataset, ModelParams, OutcomeSpec, design_matrix, log_gating_matrix, reorder_components
from .rng import SeedLike, derive_seed, seed_sequence, stream


@dataclass(frozen=True)
class SimulationDgp:
    """Gaussian covariates feeding a known mixture."""

    covariate_mean: np.ndarray
    covariate_cov: np.ndarray
    params: ModelParams
    spec: OutcomeSpec

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.covariate_mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariate_cov, dtype=float))
        p = mean.size
        if cov.shape != (p, p):
            raise ValidationError("covariance shape must match the covariate mean")
        if not np.allclose(cov, cov.T):
            raise ValidationError("covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValidationError("covariance must be positive definite") from None
        if self.params.n_covariates != p:
            raise ValidationError("params disagree with the covariate dimension")
        if self.params.n_outcomes != self.spec.n_outcomes:
            raise ValidationError("params disagree with the outcome spec")
        object.__setattr__(self, "covariate_mean", mean)
        object.__setattr__(self, "covariate_cov", cov)


@dataclass(frozen=True)
class PatternSelection:
    """One masked pattern's logistic selection model.

    ``intercept`` is the baseline lambda; the effective intercept is
    ``lambda - eta``.  ``y_coef`` maps observed coordinate index -> slope and
    may only touch coordinates the pattern observes (this is what makes the
    mechanism MAR).
    """

    bits: tuple[int, ...]
    intercept: float
    x_coef: np.ndarray
    y_coef: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits) or len(bits) == 0:
            raise ValidationError("pattern bits must be 0/1")
        if all(b == 1 for b in bits):
            raise ValidationError("the complete pattern is the implicit remainder")
        observed = {j for j, b in enumerate(bits) if b == 1}
        if not set(self.y_coef).issubset(observed):
            raise ValidationError(
                f"pattern {bits}: outcome slopes may only touch observed coordinates"
            )
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "x_coef", np.asarray(self.x_coef, dtype=float))


@dataclass(frozen=True)
class SelectionModel:
    patterns: tuple[PatternSelection, ...]
    eta: float

    def __post_init__(self):
        if self.eta < 0:
            raise ValidationError("eta must be nonnegative")
        seen = {p.bits for p in self.patterns}
        if len(seen) != len(self.patterns):
            raise ValidationError("duplicate missing patterns")
        object.__setattr__(self, "patterns", tuple(self.patterns))


def benchmark_dgp(n_max: int = 10) -> SimulationDgp:
    """Three well-separated components over four outcomes, two covariates."""
    beta = np.array([
        [0.0, 0.0, 0.0],
        [-1.5, 0.3, 0.4],
        [-2.0, 0.5, 0.25],
    ])
    theta = np.array([
        [0.8, 0.8, 0.8, 0.8],
        [0.5, 0.5, 0.5, 0.5],
        [0.1, 0.1, 0.1, 0.1],
    ])
    return SimulationDgp(
        covariate_mean=np.array([2.0, 3.0]),
        covariate_cov=np.array([[1.0, 0.2], [0.2, 1.0]]),
        params=ModelParams(beta=beta, theta=theta),
        spec=OutcomeSpec(maxima=np.full(4, n_max)),
    )


def benchmark_selection(eta: float = 2.0) -> SelectionModel:
    """Four masked patterns over the benchmark's outcomes, dialed by eta."""
    patterns = (
        PatternSelection(bits=(0, 0, 0, 1), intercept=-2.0,
                         x_coef=np.array([-0.25, 0.3]), y_coef={3: 0.15}),
        PatternSelection(bits=(0, 1, 1, 0), intercept=-1.0,
                         x_coef=np.array([0.3, -0.7]), y_coef={1: -0.1, 2: 0.15}),
        PatternSelection(bits=(1, 0, 1, 0), intercept=-2.0,
                         x_coef=np.array([0.7, -0.4]), y_coef={0: 0.24, 2: -0.15}),
        PatternSelection(bits=(1, 1, 1, 0), intercept=-1.0,
                         x_coef=np.array([0.2, -0.15]), y_coef={0: 0.15, 1: -0.14, 2: 0.05}),
    )
    return SelectionModel(patterns=patterns, eta=eta)


def simulate_complete(dgp: SimulationDgp, n: int, seed: SeedLike):
    """Draw (covariates, labels, outcomes); returns the Dataset and 1-based labels.

    Draw order is fixed: covariates, then component labels, then outcomes.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = stream(seed)
    x = rng.multivariate_normal(dgp.covariate_mean, dgp.covariate_cov, size=n)
    weights = np.exp(log_gating_matrix(design_matrix(x), dgp.params.beta))
    cum = np.cumsum(weights, axis=1)
    u = rng.random(n)
    z = (u[:, None] > cum).sum(axis=1)
    y = rng.binomial(dgp.spec.maxima[None, :], dgp.params.theta[z])
    data = Dataset(covariates=x, outcomes=y, spec=dgp.spec)
    return data, z + 1


def pattern_probabilities(data: Dataset, model: SelectionModel) -> np.ndarray:
    """n x (len(patterns)+1) per-row pattern probabilities; last column is the
    complete-case remainder."""
    if not data.is_complete:
        raise ValidationError("selection applies to complete data")
    probs = np.empty((data.n, len(model.patterns) + 1))
    for a, pat in enumerate(model.patterns):
        if pat.x_coef.shape != (data.n_covariates,):
            raise ValidationError("selection covariate slopes disagree with the data")
        logit = pat.intercept - model.eta + data.covariates @ pat.x_coef
        for j, coef in pat.y_coef.items():
            logit = logit + coef * data.outcomes[:, j]
        probs[:, a] = expit(logit)
    remainder = 1.0 - probs[:, :-1].sum(axis=1)
    if (remainder < 0).any():
        i = int(np.argmin(remainder))
        raise GenerationError(
            f"row {i}: masked-pattern probabilities sum to {1 - remainder[i]:.4f} > 1"
        )
    probs[:, -1] = remainder
    return probs


def apply_selection(data: Dataset, model: SelectionModel, seed: SeedLike) -> Dataset:
    """Assign each row one pattern (or completeness) and mask its cells."""
    probs = pattern_probabilities(data, model)
    rng = stream(seed)
    u = rng.random(data.n)
    choice = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    choice = np.minimum(choice, len(model.patterns))

    observed = np.ones((data.n, data.n_outcomes), dtype=bool)
    for a, pat in enumerate(model.patterns):
        rows = choice == a
        observed[rows] = np.asarray(pat.bits, dtype=bool)
    return Dataset(covariates=data.covariates, outcomes=data.outcomes,
                   spec=data.spec, observed=observed)


def align_components(estimate: ModelParams, truth: ModelParams) -> ModelParams:
    """Relabel the estimate to minimize total L2 distance between theta rows."""
    if estimate.theta.shape != truth.theta.shape:
        raise ValidationError("estimate and truth have different shapes")
    cost = np.linalg.norm(
        estimate.theta[:, None, :] - truth.theta[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    order = np.empty(truth.n_components, dtype=int)
    order[cols] = rows
    return reorder_components(estimate, order)


def _component_errors(aligned: ModelParams, truth: ModelParams) -> tuple[float, float]:
    """Summed per-component squared L2 errors; beta skips the pinned row."""
    beta_err = float(((aligned.beta[1:] - truth.beta[1:]) ** 2).sum())
    theta_err = float(((aligned.theta - truth.theta) ** 2).sum())
    return beta_err, theta_err


def evaluate_mse(estimates, truth: ModelParams) -> tuple[float, float]:
    """Replicate-averaged summed per-component squared L2 errors.

    Estimates are aligned to the truth (theta-row matching) before scoring;
    the parametric 1/n error decay shows up on this squared scale.
    """
    estimates = list(estimates)
    if not estimates:
        raise ValidationError("need at least one estimate")
    beta_err = 0.0
    theta_err = 0.0
    for est in estimates:
        aligned = align_components(est, truth)
        b, t = _component_errors(aligned, truth)
        beta_err += b
        theta_err += t
    u = len(estimates)
    return beta_err / u, theta_err / u


@dataclass(frozen=True)
class StudyCell:
    n: int
    eta: float
    n_replicates: int
    bootstrap_b: int
    mse_beta: float
    mse_theta: float
    coverage_beta: float
    coverage_theta: float
    failed_fits: int


@dataclass(frozen=True)
class StudyReport:
    cells: tuple[StudyCell, ...]
    detail: tuple[dict, ...]
    seed: int


def run_study(dgp: SimulationDgp, selection: SelectionModel | None, n_grid, eta_grid,
              n_replicates: int, bootstrap_b: int, config: McemConfig,
              seed: SeedLike) -> StudyReport:
    """Simulate/fit/score over the (n, eta) grid.

    Replicate u of cell (n_i, eta_e) runs on streams under ``(seed; e, i, u)``.
    ``bootstrap_b = 0`` skips the coverage columns.  Replicates whose fit
    loses every start are counted in ``failed_fits`` and dropped.
    """
    n_grid = [int(v) for v in n_grid]
    eta_grid = [float(v) for v in eta_grid]
    if not n_grid or not eta_grid or n_replicates < 1:
        raise ValidationError("grids must be nonempty and n_replicates >= 1")
    if selection is None and any(np.isfinite(e) for e in eta_grid):
        raise ValidationError("a finite eta requires a selection model")

    truth = dgp.params
    n_beta_free = (truth.n_components - 1) * (truth.n_covariates + 1)
    truth_vec = truth.free_vector()
    cells = []
    detail = []
    for e_idx, eta in enumerate(eta_grid):
        for n_idx, n in enumerate(n_grid):
            beta_sum = theta_sum = 0.0
            covered = np.zeros(truth_vec.size)
            n_covered = 0
            failed = 0
            done = 0
            for u in range(n_replicates):
                ss = seed_sequence(seed, e_idx, n_idx, u)
                data, _ = simulate_complete(dgp, n, seed_sequence(ss, 0))
                if selection is not None and np.isfinite(eta):
                    masked = apply_selection(
                        data, replace(selection, eta=eta), seed_sequence(ss, 1))
                else:
                    masked = data
                cfg = replace(config, em=replace(config.em, seed=derive_seed(ss, 2)))
                try:
                    fit = fit_mcem(masked, cfg)
                except Exception as exc:  # noqa: BLE001 - recorded, not fatal
                    failed += 1
                    detail.append({"n": n, "eta": eta, "replicate": u,
                                   "failed": True, "error": str(exc)})
                    continue
                aligned = align_components(fit.params, truth)
                b_err, t_err = _component_errors(aligned, truth)
                beta_sum += b_err
                theta_sum += t_err
                done += 1
                record = {"n": n, "eta": eta, "replicate": u, "failed": False,
                          "beta_error": b_err, "theta_error": t_err,
                          "converged": bool(fit.converged)}
                if bootstrap_b > 0:
                    report = bootstrap(masked, aligned, bootstrap_b, cfg,
                                       seed=seed_sequence(ss, 3))
                    inside = (report.ci_lower <= truth_vec) & (truth_vec <= report.ci_upper)
                    covered += inside
                    n_covered += 1
                    record["covered_beta"] = float(inside[:n_beta_free].mean())
                    record["covered_theta"] = float(inside[n_beta_free:].mean())
                detail.append(record)

            cov_beta = cov_theta = float("nan")
            if n_covered:
                per_param = covered / n_covered
                cov_beta = float(per_param[:n_beta_free].mean())
                cov_theta = float(per_param[n_beta_free:].mean())
            cells.append(StudyCell(
                n=n, eta=eta, n_replicates=n_replicates, bootstrap_b=bootstrap_b,
                mse_beta=beta_sum / max(done, 1), mse_theta=theta_sum / max(done, 1),
                coverage_beta=cov_beta, coverage_theta=cov_theta, failed_fits=failed,
            ))
    return StudyReport(cells=tuple(cells), detail=tuple(detail), seed=derive_seed(seed))
