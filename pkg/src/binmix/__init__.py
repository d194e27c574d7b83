"""Covariate-gated mixtures of binomial products for bounded discrete outcomes.

Fits the mixture on complete data by EM, handles nonmonotone missing-at-random
outcomes through a nested Monte Carlo EM with multiple imputation, and layers
bootstrap inference, model-based clustering, trajectory summaries, model
selection, and a simulation/evaluation harness on top.
"""

from .errors import (
    BinmixError,
    ConvergenceError,
    ConvergenceWarning,
    DegenerateComponentError,
    GenerationError,
    OptimizationError,
    ValidationError,
)
from .model import (
    Dataset,
    MissingPattern,
    ModelParams,
    OutcomeSpec,
    binomial_log_pmf,
    component_log_density,
    gating_weights,
    li_log_likelihood,
    log_sum_exp,
    obs_log_likelihood,
    param_count,
    pattern_log_density,
    reorder_components,
    severity_order,
)
from .gating import OptimizerConfig, fit_weighted_logistic, weighted_logistic_grad, weighted_logistic_nll
from .em import EmConfig, FitReport, fit_em, posterior_weights, random_init, update_theta
from .imputation import ConditionalMixture, ImputedDatasetSet, conditional_mixture, impute_multiple, impute_once
from .mcem import McemConfig, fit_mcem
from .inference import BootstrapReport, bootstrap
from .clustering import (
    ClusterAssignment,
    Panel,
    TrajectoryTable,
    TransitionMatrix,
    assign_clusters,
    build_trajectories,
    posterior_with_missing,
    transition_matrix,
)
from .selection import SelectionReport, aic, bic, identifiability_bound, select_k
from .simulation import (
    PatternSelection,
    SelectionModel,
    SimulationDgp,
    StudyReport,
    align_components,
    apply_selection,
    benchmark_dgp,
    benchmark_selection,
    evaluate_mse,
    run_study,
    simulate_complete,
)

__version__ = "0.1.0"
