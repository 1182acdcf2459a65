"""naglab: a numerical laboratory for the NAG-GS stochastic optimizer.

The package bundles the optimizer steppers (NAG-GS, NAG-FI, baselines),
closed-form stability analysis on quadratics, stationary-covariance
prediction, SDE ensemble simulation, scalar distribution metrics against
the analytic stationary density, matrix-free extreme-eigenvalue estimation,
and a deterministic experiment CLI.
"""

from ._version import __version__
from .metrics import (
    GridError,
    StationaryDensity,
    kl_divergence_knn,
    ks_statistic,
    stationary_density,
    wasserstein1,
)
from .optimizers import (
    AdamWState,
    DivergenceError,
    DomainError,
    GradientOracle,
    NagFiConfig,
    NagGsConfig,
    NewtonError,
    OptimizerState,
    adamw_initial_state,
    adamw_step,
    diverged_mask,
    initial_state,
    is_diverged,
    nag_fi_step,
    nag_gs_propose,
    nag_gs_step,
    nesterov_alpha,
    sgd_momentum_step,
)
from .problems import (
    LogisticRegressionProblem,
    Quadratic,
    ScalarTestFunction,
    load_csv_dataset,
    make_blobs,
    make_test_matrix,
)
from .quadratic import (
    NonStationaryError,
    SpectrumConfig,
    StabilityReport,
    StationaryCovariance,
    build_full_matrix,
    build_iteration_matrix,
    covariance_denominator_cubic,
    critical_alpha,
    iteration_eigenvalues,
    mode_eigenvalues,
    mode_matrix,
    montecarlo_covariance_check,
    optimal_alpha,
    spectral_radius,
    spectral_radius_curve,
    stability_report,
    stationary_covariance,
    system_spectral_radius,
)
from .sde import (
    Ensemble,
    MetricSeries,
    QuadraticExperiment,
    QuadraticRunResult,
    StationarityConfig,
    euler_maruyama_gf,
    run_nag_fi_quadratic_ensemble,
    run_nag_gs_ensemble,
    run_quadratic_ensemble,
    run_stationarity_study,
)
from .spectrum import (
    EigenEstimate,
    LinearOperator,
    extreme_eigenvalues,
    power_iteration,
    rayleigh_refine,
)

__all__ = [
    "__version__",
    # optimizers
    "OptimizerState", "AdamWState", "NagGsConfig", "NagFiConfig",
    "GradientOracle", "DivergenceError", "DomainError", "NewtonError",
    "initial_state", "nag_gs_propose", "nag_gs_step", "nag_fi_step",
    "sgd_momentum_step", "adamw_step", "adamw_initial_state",
    "nesterov_alpha", "is_diverged", "diverged_mask",
    # quadratic analysis
    "SpectrumConfig", "StabilityReport", "StationaryCovariance",
    "NonStationaryError", "mode_matrix", "mode_eigenvalues",
    "build_iteration_matrix", "build_full_matrix", "iteration_eigenvalues",
    "spectral_radius", "system_spectral_radius", "optimal_alpha",
    "critical_alpha", "covariance_denominator_cubic", "spectral_radius_curve",
    "stability_report", "stationary_covariance", "montecarlo_covariance_check",
    # sde lab
    "Ensemble", "MetricSeries", "QuadraticExperiment", "QuadraticRunResult",
    "StationarityConfig", "euler_maruyama_gf", "run_nag_gs_ensemble",
    "run_nag_fi_quadratic_ensemble", "run_quadratic_ensemble",
    "run_stationarity_study",
    # metrics
    "GridError", "StationaryDensity", "ks_statistic", "wasserstein1",
    "kl_divergence_knn", "stationary_density",
    # spectrum
    "LinearOperator", "EigenEstimate", "power_iteration", "rayleigh_refine",
    "extreme_eigenvalues",
    # problems
    "Quadratic", "ScalarTestFunction", "LogisticRegressionProblem",
    "make_test_matrix", "make_blobs", "load_csv_dataset",
]
