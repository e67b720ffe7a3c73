"""fraclan: drift estimation for SDEs driven by rough fractional noise.

Simulation of fractional Brownian paths, singular-kernel transforms,
likelihood ratios and maximum-likelihood drift estimation, asymptotic
information, and a Monte Carlo harness verifying the predicted limit
behavior of the estimator.
"""

from . import cli, fbm, fisher, fracops, lanlab, likelihood, models
from .fbm import Grid, Seed, generate_fbm
from .fisher import FisherMatrix, assemble_fisher, fou_fisher_closed
from .fracops import FracConstants, SingularQuadrature, make_constants
from .lanlab import ExperimentConfig, LanReport, run_mle_experiment
from .likelihood import ObservedPath, loglik_ratio, mle_linear, mle_numeric
from .models import DriftModel, builtin_model, euler_solve, stationary_burnin

__version__ = "0.1.0"

__all__ = [
    "cli",
    "fbm",
    "fisher",
    "fracops",
    "lanlab",
    "likelihood",
    "models",
    "Grid",
    "Seed",
    "generate_fbm",
    "FisherMatrix",
    "assemble_fisher",
    "fou_fisher_closed",
    "FracConstants",
    "SingularQuadrature",
    "make_constants",
    "ExperimentConfig",
    "LanReport",
    "run_mle_experiment",
    "ObservedPath",
    "loglik_ratio",
    "mle_linear",
    "mle_numeric",
    "DriftModel",
    "builtin_model",
    "euler_solve",
    "stationary_burnin",
    "__version__",
]
