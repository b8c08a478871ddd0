"""Weakly asymptotic cylinders for time-decaying Hamiltonian
perturbations, with a planar three-body-plus-comet model."""

from .grids import GridFn, SpatialGrid, TimeGrid

__all__ = ["GridFn", "SpatialGrid", "TimeGrid"]
__version__ = "0.1.0"
