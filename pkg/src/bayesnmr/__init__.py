"""Bayesian quantification of mixture concentrations from NMR FIDs."""
__version__ = "0.1.0"

from .model import (AcquisitionConfig, FidRecord, Line, NoiseModel, NuisanceParams, Species,
                    SpeciesTable, basis_matrices, ppm_to_rad_s, rad_s_to_ppm, simulate_fid)
from .inference import (AmplitudePosterior, AmplitudePrior, amplitude_posterior,
                        log_marginal_likelihood, mu_real, sample_amplitudes)
from .simpsa import AnnealSchedule, BoundedParamSpace, Dim, OptimResult, simpsa_maximize
from .quantify import FitOptions, QuantResult, coverage_stats, fit

__all__ = [
    "AcquisitionConfig", "FidRecord", "Line", "NoiseModel", "NuisanceParams", "Species",
    "SpeciesTable", "basis_matrices", "ppm_to_rad_s", "rad_s_to_ppm", "simulate_fid",
    "AmplitudePosterior", "AmplitudePrior", "amplitude_posterior", "log_marginal_likelihood",
    "mu_real", "sample_amplitudes", "AnnealSchedule", "BoundedParamSpace", "Dim", "OptimResult",
    "simpsa_maximize", "FitOptions", "QuantResult", "coverage_stats", "fit",
]
