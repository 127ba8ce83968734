"""Arrival-time workbench: free and open 1D quantum dynamics on uniform grids."""
from .grid import (
    DensityMatrix,
    GaussianPacketSpec,
    SimulationGrid,
    WaveFunction,
    WignerFunction,
    energy_moments,
    expectation_P,
    prepare_gaussian,
    wigner_transform,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DensityMatrix",
    "GaussianPacketSpec",
    "SimulationGrid",
    "WaveFunction",
    "WignerFunction",
    "energy_moments",
    "expectation_P",
    "prepare_gaussian",
    "wigner_transform",
]
