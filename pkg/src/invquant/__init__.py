"""Bayesian reconstruction of lattice potentials from position measurements."""

from .classical import ClassicalProblem, classical_likelihood, classical_map
from .data import Dataset, empirical_density, gaussian_noise_blur, sample_dataset
from .errors import (ConfigError, ConvergenceError, DataError, InvQuantError, NumericalError,
                     OptimizerStall)
from .hartree_fock import TwoBodySpec, hf_reconstruct, scf_solve
from .lattice import Boundary, Lattice, LatticeOperator, PotentialField
from .optimizer import OptimizerConfig, QuantumProblem, ReconstructionResult, iterate
from .priors import EnergyPenalty, GaussianPrior, MixturePrior, SymmetryPrior
from .spectral import position_likelihood, solve

__version__ = "0.1.0"

__all__ = [
    "Boundary", "ClassicalProblem", "ConfigError", "ConvergenceError", "DataError", "Dataset",
    "EnergyPenalty", "GaussianPrior", "InvQuantError", "Lattice", "LatticeOperator", "MixturePrior",
    "NumericalError", "OptimizerConfig", "OptimizerStall", "PotentialField", "QuantumProblem",
    "ReconstructionResult", "SymmetryPrior", "TwoBodySpec", "classical_likelihood", "classical_map",
    "empirical_density", "gaussian_noise_blur", "hf_reconstruct", "iterate", "position_likelihood",
    "sample_dataset", "scf_solve", "solve",
]
