"""Robust Gaussian-process uniform error bounds under hyperparameter uncertainty."""

__version__ = "0.1.0"

from .kernels import HyperVector, KernelFamily, KernelSpec, cross_vector, gram_matrix, kernel_eval
from .gp import (
    Dataset,
    FactorizationError,
    GPModel,
    NumericsError,
    fit,
    log_marginal_likelihood,
    maximize_log_marginal_likelihood,
    posterior_mean,
    posterior_var,
    sample_prior_function,
)
from .hyperposterior import (
    GaussianLogPrior,
    LaplaceCurvatureError,
    PosteriorSampleSet,
    SamplerConfig,
    SamplerStuckError,
    UniformBoxPrior,
    empirical_bayes_prior,
    laplace_approximation,
    log_unnormalized_posterior,
    posterior_mass_in_box,
    quadrature_posterior_1d,
    sample_posterior,
)
from .bounds import (
    BoundMode,
    BoundingPair,
    RobustBound,
    beta_bar_theoretical,
    build_robust_bound,
    find_bounding_pair,
    gamma_of,
    mean_discrepancy_bound,
    robust_interval,
    sidak_box,
)
from .control import (
    BacksteppingController,
    DesiredTrajectory,
    DivergenceError,
    SingularGainError,
    StrictFeedbackSystem,
    Trajectory,
    adaptive_gain,
    backstepping_input,
    collect_training_data,
    manipulator_system,
    simulate,
)
from .experiments import (
    MixtureGP,
    ResultRow,
    fully_bayesian_predict,
    load_dataset_csv,
    run_control_experiment,
    run_sample_study,
    run_violation_benchmark,
    violation_rate,
    write_dataset_csv,
)
from .config import ConfigError, ExperimentConfig, build_config, load_config_file
from . import oracles
