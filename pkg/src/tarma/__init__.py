"""Robust estimation toolkit for two-regime TARMA time-series models.

Simulate threshold ARMA processes, contaminate them with additive,
replacement or innovation outliers, fit them by robust M-estimation
(IRLS with a bounded redescending loss, profiled grid search over the
threshold and delay), and evaluate estimator quality through Monte Carlo
bias/variance studies and out-of-sample forecasting.
"""

__version__ = "0.1.0"

from .errors import InvalidInputError, NumericFailureError, TarmaError
from .estimation import (FitConfig, FitResult, ThresholdGrid,
                         fit_fixed_threshold, initial_estimate,
                         model_selection_criterion, profile_search,
                         robust_outlier_weights, sandwich_covariance)
from .evaluation import (BENCHMARK_CASES, McConfig, McReport,
                         asymptotic_bias_curve, forecast_horizon,
                         forecast_recursive, mape, run_mc_experiment,
                         select_alpha)
from .loss import LossSpec, irls_weight, m_scale, psi, rho
from .model import (ContaminationSpec, InnovationSpec, TarmaParams,
                    conditional_mean, contaminate, contaminate_innovations,
                    residual_jacobian, residuals, simulate, validate)
from .series import TimeSeries, load_csv, log_returns, split

__all__ = [
    "__version__",
    "TarmaError", "InvalidInputError", "NumericFailureError",
    "TimeSeries", "load_csv", "log_returns", "split",
    "TarmaParams", "InnovationSpec", "ContaminationSpec",
    "validate", "residuals", "residual_jacobian", "conditional_mean",
    "simulate", "contaminate", "contaminate_innovations",
    "LossSpec", "rho", "psi", "irls_weight", "m_scale",
    "ThresholdGrid", "FitConfig", "FitResult",
    "initial_estimate", "fit_fixed_threshold", "profile_search",
    "sandwich_covariance", "robust_outlier_weights",
    "model_selection_criterion",
    "BENCHMARK_CASES", "McConfig", "McReport",
    "run_mc_experiment", "asymptotic_bias_curve",
    "mape", "forecast_horizon", "forecast_recursive", "select_alpha",
]
