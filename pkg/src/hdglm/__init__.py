"""High-dimensional U-statistic tests for generalized linear model coefficients."""

from .estimation import FitOptions, FitResult, fit_nuisance
from .exceptions import (DegenerateStatisticError, DomainError, EstimationError, HdglmError,
                         NotConvergedError, SimulationFailureError, ValidationError)
from .families import (FAMILIES, LOGISTIC, NEGATIVE_BINOMIAL, POISSON, PROBIT, Dataset,
                       GlmFamily, get_family, psi)
from .fdr import benjamini_hochberg
from .inference import (GlobalStatistics, NuisanceStatistics, TestResult, global_statistics,
                        goeman_asymptotic_test, goeman_montecarlo_test, nuisance_statistics,
                        proposed_global_test, proposed_nuisance_test)
from .moments import TheoreticalMoments, predicted_power, theoretical_moments
from .simulation import PowerProfile, SimulationDesign, run_power_study

__version__ = "0.1.0"

__all__ = [
    "FitOptions", "FitResult", "fit_nuisance",
    "HdglmError", "ValidationError", "DomainError", "EstimationError",
    "DegenerateStatisticError", "NotConvergedError", "SimulationFailureError",
    "FAMILIES", "LOGISTIC", "POISSON", "NEGATIVE_BINOMIAL", "PROBIT",
    "Dataset", "GlmFamily", "get_family", "psi",
    "benjamini_hochberg",
    "GlobalStatistics", "NuisanceStatistics", "TestResult", "global_statistics",
    "proposed_global_test", "goeman_asymptotic_test", "goeman_montecarlo_test",
    "nuisance_statistics", "proposed_nuisance_test",
    "TheoreticalMoments", "theoretical_moments", "predicted_power",
    "SimulationDesign", "PowerProfile", "run_power_study",
]
