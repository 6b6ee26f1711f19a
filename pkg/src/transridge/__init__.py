"""Transfer-learning ridge regression with correlated random coefficients."""
from .errors import ConfigError, CrossTermSingularityError, NumericalFailure, SingularSystemError
from .estimation import (HyperParams, QuadraticRiskSystem, WeightSolution,
                         asymptotic_estimation_system, closed_form_identity_risk,
                         closed_form_identity_weights, equal_weights,
                         estimation_risk_upper_bound, finite_sample_estimation_system,
                         heritability_from_snr, snr_from_heritability, solve_optimal_weights)
from .fitting import (FitResult, Standardization, cross_validate_lambda, screen_predictors,
                      transfer_ridge_fit)
from .prediction import (PredictionSystem, asymptotic_prediction_system,
                         finite_sample_prediction_system)
from .ridge import CoefficientSet, EigenStudy, StudyData, aggregate, ridge_estimate, sample_covariance
from .spectral import (CrossTermMode, SpectralSummary, cross_term_E, cross_term_P,
                       mp_identity_stieltjes, spectral_summary)

__version__ = "0.1.0"
