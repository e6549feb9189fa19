"""Quasistatic brittle fracture of thin films: 3D film solver, 2D membrane
limit solver, relaxed-density estimators, and the thickness-sweep harness
that measures how the 3D model approaches its 2D limit."""

from lamella.densities import DensityModel
from lamella.grids import Field, Grid, PhaseParams
from lamella.evolution import BoundaryProgram, EvolutionState, EvolutionTrace

__all__ = [
    "DensityModel",
    "Grid",
    "Field",
    "PhaseParams",
    "BoundaryProgram",
    "EvolutionState",
    "EvolutionTrace",
]

__version__ = "0.1.0"
