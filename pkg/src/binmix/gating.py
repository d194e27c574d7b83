"""Weighted multi-class logistic regression for the gating network.

The M-step for the gating coefficients regresses simplex-valued soft targets
(the per-row posterior weights) on the covariates.  The objective

    nll(beta) = -(1/n) sum_i sum_k W[i,k] * log softmax_k(beta @ (1, x_i))

is smooth and convex with the reference row pinned at zero.  The fit takes
damped Newton steps under a backtracking (sufficient-decrease) line search:
the free-coefficient block is small, so the Hessian solve is cheap, the
iteration is deterministic, and the objective never increases.  Plain
gradient steps are the fallback when the Hessian solve is unusable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceWarning, OptimizationError, ValidationError
from .model import _lse_rows, design_matrix

_ARMIJO_C = 1e-4
_BACKTRACK = 0.5
_MIN_STEP = 1e-18


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for the gating fit.

    ``tolerance`` is on the gradient infinity-norm.  ``ridge`` adds an
    optional L2 penalty on the free rows (off by default; useful only under
    complete separation).
    """

    tolerance: float = 1e-8
    max_iterations: int = 500
    ridge: float = 0.0


def _validate(beta: np.ndarray, design: np.ndarray, weights: np.ndarray) -> None:
    n, k = weights.shape
    if design.shape[0] != n:
        raise ValidationError("covariates and soft targets disagree on the row count")
    if beta.shape != (k, design.shape[1]):
        raise ValidationError(
            f"beta must be {k} x {design.shape[1]}, got {beta.shape[0]} x {beta.shape[1]}"
        )
    if np.any(beta[0] != 0.0):
        raise ValidationError("beta row 0 must stay pinned at zero")


def _soft_target_check(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[1] < 1:
        raise ValidationError("soft targets must be an n x K matrix")
    if (w < 0).any() or np.abs(w.sum(axis=1) - 1.0).max() > 1e-10:
        raise ValidationError("each soft-target row must lie on the probability simplex")
    return w


def _nll_grad_probs(beta, design, weights, ridge):
    logits = design @ beta.T
    lse = _lse_rows(logits)
    n = design.shape[0]
    nll = float(np.mean(lse - (logits * weights).sum(axis=1)))
    probs = np.exp(logits - lse[:, None])
    grad = (probs - weights).T @ design / n
    if ridge > 0.0:
        nll += 0.5 * ridge * float((beta[1:] ** 2).sum())
        grad += ridge * beta
    grad[0] = 0.0
    return nll, grad, probs


def _free_hessian(design: np.ndarray, probs: np.ndarray, ridge: float) -> np.ndarray:
    """Hessian over the free rows, shape ((K-1)(p+1))^2."""
    n, q = design.shape
    k = probs.shape[1]
    size = (k - 1) * q
    hess = np.empty((size, size))
    for a in range(1, k):
        for b in range(a, k):
            w = probs[:, a] * ((1.0 if a == b else 0.0) - probs[:, b])
            block = (design * w[:, None]).T @ design / n
            hess[(a - 1) * q:a * q, (b - 1) * q:b * q] = block
            if a != b:
                hess[(b - 1) * q:b * q, (a - 1) * q:a * q] = block
    if ridge > 0.0:
        hess[np.diag_indices(size)] += ridge
    return hess


def weighted_logistic_nll(beta, x, weights, ridge: float = 0.0) -> float:
    """Mean weighted cross-entropy of the gating model against soft targets."""
    w = _soft_target_check(weights)
    design = design_matrix(x)
    beta = np.asarray(beta, dtype=float)
    _validate(beta, design, w)
    return _nll_grad_probs(beta, design, w, ridge)[0]


def weighted_logistic_grad(beta, x, weights, ridge: float = 0.0) -> np.ndarray:
    """Gradient of :func:`weighted_logistic_nll`; row 0 is fixed at zero."""
    w = _soft_target_check(weights)
    design = design_matrix(x)
    beta = np.asarray(beta, dtype=float)
    _validate(beta, design, w)
    return _nll_grad_probs(beta, design, w, ridge)[1]


def fit_weighted_logistic(x, weights, init, config: OptimizerConfig = OptimizerConfig()) -> np.ndarray:
    """Minimize the weighted logistic loss; row 0 stays pinned at zero.

    Each iteration takes the Newton direction on the free rows (falling back
    to the gradient when the solve is unusable) and backtracks until the
    sufficient-decrease condition holds, so the objective is nonincreasing.
    Hitting the iteration cap emits a :class:`ConvergenceWarning` and returns
    the best iterate.
    """
    w = _soft_target_check(weights)
    design = design_matrix(x)
    beta = np.array(init, dtype=float)
    _validate(beta, design, w)
    if beta.shape[0] == 1:
        return beta  # nothing free to fit

    q = design.shape[1]
    f, grad, probs = _nll_grad_probs(beta, design, w, config.ridge)
    if not np.isfinite(f):
        raise OptimizationError("gating objective is non-finite at the initial point")

    for _ in range(config.max_iterations):
        if np.abs(grad).max() <= config.tolerance:
            return beta
        g_free = grad[1:].ravel()
        hess = _free_hessian(design, probs, config.ridge)
        try:
            direction = np.linalg.solve(hess + 1e-12 * np.eye(hess.shape[0]), g_free)
        except np.linalg.LinAlgError:
            direction = g_free
        slope = float(g_free @ direction)
        if not np.isfinite(slope) or slope <= 0.0:
            direction, slope = g_free, float(g_free @ g_free)

        step = 1.0
        delta = np.zeros_like(beta)
        while step >= _MIN_STEP:
            delta[1:] = (step * direction).reshape(-1, q)
            cand = beta - delta
            f_cand, grad_cand, probs_cand = _nll_grad_probs(cand, design, w, config.ridge)
            if np.isfinite(f_cand) and f_cand <= f - _ARMIJO_C * step * slope:
                break
            step *= _BACKTRACK
        else:
            raise OptimizationError("gating line search collapsed; covariates may be degenerate")
        beta, f, grad, probs = cand, f_cand, grad_cand, probs_cand

    if np.abs(grad).max() > config.tolerance:
        warnings.warn(
            f"gating fit stopped at {config.max_iterations} iterations "
            f"(grad inf-norm {np.abs(grad).max():.2e})",
            ConvergenceWarning,
        )
    return beta
