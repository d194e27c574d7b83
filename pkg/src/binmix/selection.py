"""Model selection over the component count and the identifiability bound.

AIC(K) = 2 nu(K) - 2 l_obs and BIC(K) = nu(K) log n - 2 l_obs, where nu is
the free-parameter count and the log-likelihood is always the observed-data
one recomputed at the fitted parameters.  ``select_k`` reports the whole
curve so an elbow can be inspected; the chosen K is the strict argmin.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

from .em import FitReport
from .errors import DegenerateComponentError, ValidationError
from .mcem import McemConfig, fit_mcem
from .model import Dataset, OutcomeSpec, obs_log_likelihood, param_count
from .rng import derive_seed


def aic(fit: FitReport, data: Dataset) -> float:
    nu = fit.params.n_free
    return 2.0 * nu - 2.0 * obs_log_likelihood(data, fit.params)


def bic(fit: FitReport, data: Dataset) -> float:
    nu = fit.params.n_free
    return nu * math.log(data.n) - 2.0 * obs_log_likelihood(data, fit.params)


def identifiability_bound(n_components: int, spec: OutcomeSpec) -> tuple[bool, int]:
    """Check d >= 2*ceil(log_{1+min N} K) + 1; returns (passes, bound).

    The bound is a sufficient condition only, so callers should treat a
    failure as advisory.  K = 1 passes with bound 1.
    """
    if n_components < 1:
        raise ValidationError("n_components must be >= 1")
    if n_components == 1:
        return spec.n_outcomes >= 1, 1
    base = 1 + int(spec.maxima.min())
    t = 0
    power = 1
    while power < n_components:  # t = ceil(log_base K), exact in integers
        power *= base
        t += 1
    bound = 2 * t + 1
    return spec.n_outcomes >= bound, bound


@dataclass(frozen=True)
class SelectionRow:
    n_components: int
    n_free: int
    log_likelihood: float
    aic: float
    bic: float
    converged: bool
    failed: bool


@dataclass(frozen=True)
class SelectionReport:
    rows: tuple[SelectionRow, ...]
    criterion: str
    chosen_k: int


def select_k(data: Dataset, k_range, criterion: str, config: McemConfig) -> SelectionReport:
    """Fit every K in ``k_range`` with the full multi-start protocol.

    All K share the dataset-level seed but draw starts from per-K streams so
    the curves are comparable.  A K whose every start loses a component is
    marked failed and excluded from the argmin.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 1:
        raise ValidationError("k_range must contain integers >= 1")
    if criterion not in ("aic", "bic"):
        raise ValidationError("criterion must be 'aic' or 'bic'")

    rows = []
    for k in ks:
        ok, bound = identifiability_bound(k, data.spec)
        if not ok:
            warnings.warn(
                f"K={k} violates the generic-identifiability bound (needs d >= {bound})",
                UserWarning,
            )
        cfg_k = replace(config, em=replace(
            config.em, n_components=k, seed=derive_seed(config.em.seed, k)))
        try:
            fit = fit_mcem(data, cfg_k)
        except DegenerateComponentError:
            warnings.warn(f"every start failed for K={k}; excluded from selection", UserWarning)
            rows.append(SelectionRow(k, param_count(k, data.n_covariates, data.n_outcomes),
                                     float("nan"), float("nan"), float("nan"),
                                     converged=False, failed=True))
            continue
        rows.append(SelectionRow(
            n_components=k,
            n_free=fit.params.n_free,
            log_likelihood=obs_log_likelihood(data, fit.params),
            aic=aic(fit, data),
            bic=bic(fit, data),
            converged=fit.converged,
            failed=False,
        ))

    usable = [r for r in rows if not r.failed]
    if not usable:
        raise DegenerateComponentError("every candidate K failed to fit")
    key = (lambda r: r.aic) if criterion == "aic" else (lambda r: r.bic)
    chosen = min(usable, key=key).n_components
    return SelectionReport(rows=tuple(rows), criterion=criterion, chosen_k=chosen)
