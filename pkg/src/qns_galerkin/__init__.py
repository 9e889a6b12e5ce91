"""Pseudo-spectral Faedo-Galerkin solver and estimate checker for the
regularized barotropic quantum Navier-Stokes equations with damping."""

from .functionals import ModelParams
from .spectral import PeriodicGrid, ScalarField, SpectralCoeffs, VectorField

__version__ = "0.1.0"

__all__ = ["ModelParams", "PeriodicGrid", "ScalarField", "SpectralCoeffs", "VectorField"]
