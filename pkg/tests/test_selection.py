import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from binmix import (
    EmConfig,
    McemConfig,
    OutcomeSpec,
    ValidationError,
    aic,
    bic,
    identifiability_bound,
    obs_log_likelihood,
    select_k,
)
from binmix.em import FitReport
from binmix.simulation import benchmark_dgp, simulate_complete

from conftest import random_dataset, random_params


def _report_for(params, data):
    return FitReport(params=params, log_likelihood=obs_log_likelihood(data, params),
                     iterations=1, converged=True, init_log_likelihoods=np.array([0.0]))


def test_aic_bic_hand_arithmetic(rng):
    data = random_dataset(rng, n=500, p=2, d=4, maxima=[9] * 4)
    params = random_params(rng, k=3, p=2, d=4)
    report = _report_for(params, data)
    ll = obs_log_likelihood(data, params)
    assert params.n_free == 18
    assert_allclose(aic(report, data), 2 * 18 - 2 * ll, rtol=1e-14)
    assert_allclose(bic(report, data), 18 * math.log(500) - 2 * ll, rtol=1e-14)
    # frozen arithmetic for nu=18, n=500, ll=-100
    assert_allclose(2 * 18 - 2 * (-100), 236.0)
    assert_allclose(18 * math.log(500) - 2 * (-100), 311.86, atol=5e-3)


def test_bic_minus_aic_identity(rng):
    data = random_dataset(rng, n=321, p=1, d=3, maxima=[5] * 3)
    params = random_params(rng, k=2, p=1, d=3)
    report = _report_for(params, data)
    nu = params.n_free
    assert_allclose(bic(report, data) - aic(report, data),
                    nu * (math.log(data.n) - 2), rtol=1e-12)


def test_aic_degenerate_k1(rng):
    data = random_dataset(rng, n=50, p=1, d=4, maxima=[6] * 4)
    params = random_params(rng, k=1, p=1, d=4)
    report = _report_for(params, data)
    from binmix import component_log_density
    independent = sum(
        component_log_density(data.outcomes[i], params, 0, data.spec) for i in range(50)
    )
    assert_allclose(aic(report, data), 2 * 4 - 2 * independent, rtol=1e-12)


def test_identifiability_bound_cases():
    assert identifiability_bound(1, OutcomeSpec(maxima=np.array([3]))) == (True, 1)
    ok, bound = identifiability_bound(3, OutcomeSpec(maxima=np.array([5, 5, 5, 5])))
    assert (ok, bound) == (True, 3)
    ok, bound = identifiability_bound(5, OutcomeSpec(maxima=np.array([12, 25, 25, 12, 77, 150, 300, 30])))
    assert (ok, bound) == (True, 3)
    # exact power boundary: K = (1+N)^t must not round up
    ok, bound = identifiability_bound(6, OutcomeSpec(maxima=np.array([5, 5, 5])))
    assert (ok, bound) == (True, 3)
    ok, bound = identifiability_bound(7, OutcomeSpec(maxima=np.array([5, 5, 5])))
    assert (ok, bound) == (False, 5)
    ok, bound = identifiability_bound(10, OutcomeSpec(maxima=np.array([1, 1, 1])))
    assert (ok, bound) == (False, 9)


def test_select_k_single_candidate(rng):
    data = random_dataset(rng, n=80, p=1, d=3, maxima=[6] * 3)
    cfg = McemConfig(em=EmConfig(n_components=2, seed=4, n_random_inits=2))
    report = select_k(data, [2], "aic", cfg)
    assert report.chosen_k == 2
    assert len(report.rows) == 1
    assert report.rows[0].n_free == 2 * (1 + 3 + 1) - 1 - 1


def test_select_k_prefers_true_k():
    dgp = benchmark_dgp()
    data, _ = simulate_complete(dgp, 600, seed=21)
    cfg = McemConfig(em=EmConfig(n_components=2, seed=5, n_random_inits=4))
    report = select_k(data, range(2, 5), "bic", cfg)
    assert report.chosen_k == 3
    by_k = {r.n_components: r for r in report.rows}
    assert by_k[3].bic < by_k[2].bic
    assert by_k[3].bic < by_k[4].bic
    assert by_k[3].aic < by_k[2].aic


def test_select_k_validation(rng):
    data = random_dataset(rng, n=30, p=1, d=2, maxima=[4, 4])
    cfg = McemConfig(em=EmConfig(n_components=2))
    with pytest.raises(ValidationError):
        select_k(data, [], "aic", cfg)
    with pytest.raises(ValidationError):
        select_k(data, [2], "hqc", cfg)


def test_select_k_warns_on_bound_violation(rng):
    data = random_dataset(rng, n=40, p=1, d=3, maxima=[5, 5, 5])
    cfg = McemConfig(em=EmConfig(n_components=2, seed=1, n_random_inits=1,
                                 max_iterations=5))
    with pytest.warns(UserWarning, match="identifiability"):
        select_k(data, [7], "aic", cfg)
