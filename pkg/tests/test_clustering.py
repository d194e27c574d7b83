import numpy as np
import pytest
from numpy.testing import assert_allclose

from binmix import (
    Dataset,
    MissingPattern,
    OutcomeSpec,
    Panel,
    ValidationError,
    assign_clusters,
    build_trajectories,
    gating_weights,
    impute_multiple,
    posterior_with_missing,
    transition_matrix,
)
from binmix.em import posterior_weights
from binmix.model import severity_order
from binmix.simulation import benchmark_dgp, simulate_complete

from conftest import random_dataset, random_params


def test_posterior_fully_observed_matches_complete_posterior(rng):
    data = random_dataset(rng, n=6, p=2, d=3, maxima=[5, 5, 5])
    params = random_params(rng, k=3, p=2, d=3)
    rows = posterior_weights(data, params)
    for i in range(6):
        got = posterior_with_missing(
            data.covariates[i], data.outcomes[i], MissingPattern.from_string("111"),
            params, data.spec)
        assert_allclose(got, rows[i], rtol=1e-12)


def test_posterior_fully_missing_matches_gating(rng):
    params = random_params(rng, k=3, p=2, d=4)
    spec = OutcomeSpec(maxima=np.array([5] * 4))
    x = rng.normal(size=2)
    got = posterior_with_missing(x, [], MissingPattern.from_string("0000"), params, spec)
    assert_allclose(got, gating_weights(x, params), rtol=1e-13)
    assert abs(got.sum() - 1.0) < 1e-12


def test_posterior_matches_imputation_average(rng):
    spec = OutcomeSpec(maxima=np.array([6, 6, 6]))
    data = Dataset(covariates=rng.normal(size=(4, 2)),
                   outcomes=np.where([[1, 0, 1]] * 4, rng.integers(0, 7, (4, 3)), 0),
                   spec=spec, observed=np.tile([True, False, True], (4, 1)))
    params = random_params(rng, k=3, p=2, d=3)
    m = 2000
    copies = impute_multiple(data, params, m, seed=31)
    for i in range(4):
        analytic = posterior_with_missing(
            data.covariates[i], data.outcomes[i][data.observed[i]],
            data.pattern(i), params, spec)
        draws = np.array([
            posterior_weights(copy, params)[i] for copy in copies.datasets
        ])
        se = draws.std(axis=0, ddof=1) / np.sqrt(m)
        assert np.all(np.abs(draws.mean(axis=0) - analytic) <= 3 * se + 1e-12)


def test_posterior_invariant_to_masked_cell_encoding(rng):
    spec = OutcomeSpec(maxima=np.array([5, 5]))
    x = rng.normal(size=(3, 1))
    observed = np.array([[True, False]] * 3)
    d1 = Dataset(covariates=x, outcomes=np.where(observed, 2, 0), spec=spec, observed=observed)
    d2 = Dataset(covariates=x, outcomes=np.where(observed, 2, 4), spec=spec, observed=observed)
    params = random_params(rng, k=2, p=1, d=2)
    a1 = assign_clusters(d1, params)
    a2 = assign_clusters(d2, params)
    assert np.array_equal(a1.posteriors, a2.posteriors)
    assert np.array_equal(a1.labels, a2.labels)


def test_assign_single_component_all_ones(rng):
    data = random_dataset(rng, n=5, p=1, d=2, maxima=[4, 4], missing_frac=0.3)
    params = random_params(rng, k=1, p=1, d=2)
    assignment = assign_clusters(data, params)
    assert np.all(assignment.labels == 1)


def test_assign_argmax_and_tie_break():
    posteriors = np.array([[0.2, 0.5, 0.3], [0.4, 0.4, 0.2]])
    labels = posteriors.argmax(axis=1) + 1
    assert labels.tolist() == [2, 1]  # tie goes to the lowest index


def test_assign_agrees_with_truth_on_separated_data():
    dgp = benchmark_dgp()
    data, z = simulate_complete(dgp, 1000, seed=12)
    assignment = assign_clusters(data, dgp.params)
    agreement = (assignment.labels == z).mean()
    assert agreement > 0.95


def _small_panel(rng, params, spec, n_subjects=3, n_times=2):
    n = n_subjects * n_times
    x = np.repeat(rng.normal(size=(n_subjects, params.n_covariates)), n_times, axis=0)
    y = rng.integers(0, spec.maxima[0] + 1, size=(n, spec.n_outcomes))
    data = Dataset(covariates=x, outcomes=y, spec=spec)
    subjects = np.repeat([f"s{i}" for i in range(n_subjects)], n_times)
    times = np.tile(np.arange(n_times), n_subjects)
    return Panel(data=data, subject_ids=np.array(subjects, dtype=object),
                 time_index=times)


def test_trajectory_single_record_matches_assign(rng):
    spec = OutcomeSpec(maxima=np.array([5, 5]))
    params = random_params(rng, k=2, p=1, d=2)
    data = random_dataset(rng, n=1, p=1, d=2, maxima=[5, 5])
    panel = Panel(data=data, subject_ids=np.array(["a"], dtype=object),
                  time_index=np.array([0]))
    traj = build_trajectories(panel, params)
    direct = assign_clusters(data, params)
    assert traj.labels[0] == direct.labels[0]
    assert_allclose(traj.posteriors, direct.posteriors)


def test_trajectory_identical_outcomes_identical_labels(rng):
    spec = OutcomeSpec(maxima=np.array([6, 6]))
    params = random_params(rng, k=3, p=1, d=2)
    x = np.array([[0.5], [0.5]])
    y = np.array([[2, 3], [2, 3]])
    data = Dataset(covariates=x, outcomes=y, spec=spec)
    panel = Panel(data=data, subject_ids=np.array(["a", "a"], dtype=object),
                  time_index=np.array([0, 1]))
    traj = build_trajectories(panel, params)
    assert traj.labels[0] == traj.labels[1]


def test_trajectory_follows_drifting_outcomes():
    # outcomes placed at each component's expected profile, healthiest to worst
    dgp = benchmark_dgp()
    order = severity_order(dgp.params)
    spec = dgp.spec
    times = np.arange(3)
    y = np.vstack([
        np.round(spec.maxima * dgp.params.theta[order[t]]).astype(int) for t in times
    ])
    data = Dataset(covariates=np.zeros((3, 2)), outcomes=y, spec=spec)
    panel = Panel(data=data, subject_ids=np.array(["s"] * 3, dtype=object),
                  time_index=times)
    traj = build_trajectories(panel, dgp.params)
    severity_pos = {int(k) + 1: pos for pos, k in enumerate(order)}
    positions = [severity_pos[int(lab)] for lab in traj.labels]
    assert positions == sorted(positions)
    assert positions[0] == 0 and positions[-1] == 2


def test_transition_identity_when_unchanged(rng):
    spec = OutcomeSpec(maxima=np.array([6, 6]))
    params = random_params(rng, k=3, p=1, d=2)
    panel = _small_panel(rng, params, spec, n_subjects=4, n_times=2)
    y = panel.data.outcomes.copy()
    y[1::2] = y[0::2]  # time 1 copies time 0
    data = Dataset(covariates=panel.data.covariates, outcomes=y, spec=spec)
    panel = Panel(data=data, subject_ids=panel.subject_ids, time_index=panel.time_index)
    traj = build_trajectories(panel, params)
    matrix = transition_matrix(traj, 0, 1)
    occupied = np.unique(traj.labels[0::2]) - 1
    for a in occupied:
        assert matrix.probabilities[a, a] == 1.0
    assert matrix.counts.sum() == 4


def test_transition_hand_count():
    posteriors = np.array([
        [0.9, 0.1, 0.0], [0.2, 0.7, 0.1],   # subject A: 1 -> 2
        [0.8, 0.1, 0.1], [0.6, 0.3, 0.1],   # subject B: 1 -> 1
    ])
    traj_labels = posteriors.argmax(axis=1) + 1
    from binmix.clustering import TrajectoryTable
    traj = TrajectoryTable(
        subject_ids=np.array(["a", "a", "b", "b"], dtype=object),
        time_index=np.array([0, 1, 0, 1]),
        labels=traj_labels,
        posteriors=posteriors,
    )
    matrix = transition_matrix(traj, 0, 1)
    assert_allclose(matrix.probabilities[0], [0.5, 0.5, 0.0])
    assert matrix.uniform_rows.tolist() == [False, True, True]
    assert_allclose(matrix.probabilities[1], 1 / 3)
    assert matrix.n_subjects == 2


def test_transition_recovers_planted_kernel(rng):
    kernel = np.array([[0.7, 0.3], [0.2, 0.8]])
    n_subjects = 4000
    start = rng.integers(0, 2, size=n_subjects)
    step = np.array([
        rng.choice(2, p=kernel[s]) for s in start
    ])
    from binmix.clustering import TrajectoryTable
    labels = np.empty(2 * n_subjects, dtype=int)
    labels[0::2] = start + 1
    labels[1::2] = step + 1
    traj = TrajectoryTable(
        subject_ids=np.repeat(np.arange(n_subjects), 2).astype(object),
        time_index=np.tile([0, 1], n_subjects),
        labels=labels,
        posteriors=np.zeros((2 * n_subjects, 2)),
    )
    matrix = transition_matrix(traj, 0, 1)
    for a in range(2):
        n_a = matrix.counts[a].sum()
        se = np.sqrt(kernel[a] * (1 - kernel[a]) / n_a)
        assert np.all(np.abs(matrix.probabilities[a] - kernel[a]) <= 3 * se)
        assert matrix.counts[a].sum() == (labels[0::2] == a + 1).sum()


def test_transition_stratum_and_errors(rng):
    spec = OutcomeSpec(maxima=np.array([5, 5]))
    params = random_params(rng, k=2, p=1, d=2)
    panel = _small_panel(rng, params, spec, n_subjects=5, n_times=2)
    traj = build_trajectories(panel, params)
    stratum = panel.data.covariates[:, 0] > np.median(panel.data.covariates[:, 0])
    matrix = transition_matrix(traj, 0, 1, stratum=stratum)
    assert matrix.n_subjects == int(stratum[0::2].sum())
    with pytest.raises(ValidationError):
        transition_matrix(traj, 0, 1, stratum=np.zeros(panel.data.n, dtype=bool))


def test_panel_validation(rng):
    spec = OutcomeSpec(maxima=np.array([5]))
    data = Dataset(covariates=np.array([[1.0], [1.0]]),
                   outcomes=np.array([[2], [3]]), spec=spec)
    with pytest.raises(ValidationError):
        Panel(data=data, subject_ids=np.array(["a", "a"], dtype=object),
              time_index=np.array([0, 0]))
    data2 = Dataset(covariates=np.array([[1.0], [2.0]]),
                    outcomes=np.array([[2], [3]]), spec=spec)
    with pytest.raises(ValidationError):
        Panel(data=data2, subject_ids=np.array(["a", "a"], dtype=object),
              time_index=np.array([0, 1]))
