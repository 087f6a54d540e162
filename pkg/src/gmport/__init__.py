"""Portfolio construction under Gaussian-mixture return models."""

from .egm import EgmProblem, SolveOptions, SolveReport, markowitz_solve, solve_egm
from .evar import EvarOptions, EvarProblem, EvarReport, evar_gaussian_reduced, solve_evar_alternating, solve_evar_approx
from .feasible import FeasibleSet, InfeasibleError
from .model import GmModel, ModelError, cdf, cgf, fit_em, load_model, mgf, mixture_moments, sample, save_model

__version__ = "0.1.0"
