"""Percolation on randomly stretched lattices: environments, multiscale blocks,
crossings, duality and reproducible experiments."""

from .renewal import (Deterministic, Geometric, InterarrivalSpec, Zeta, FinitePmf, Scaled, parse_spec,
                      parse_delay, Dirac, Stationary, stationary_delay_pmf, sample_renewal)
from .multiscale import ScaleSystem, build_scales, label_blocks, validate_params
from .percolation import EnvironmentWindow, Rectangle, realize_environment, sample_window, crossing
from .rng import Stream

__version__ = "0.1.0"

__all__ = [
    "Deterministic", "Geometric", "InterarrivalSpec", "Zeta", "FinitePmf", "Scaled", "parse_spec",
    "parse_delay", "Dirac", "Stationary", "stationary_delay_pmf", "sample_renewal",
    "ScaleSystem", "build_scales", "label_blocks", "validate_params",
    "EnvironmentWindow", "Rectangle", "realize_environment", "sample_window", "crossing", "Stream",
]
