"""Simulation and rare-event analysis for reflected mean-field SDEs with jumps."""
from . import backend
from .geometry import Ball, Box, Polyhedron, WholeSpace, project, resolvent
from .dynamics import ModerateScale, PathBundle, Problem, simulate_controlled, simulate_particles, solve_limit

__version__ = "0.1.0"

__all__ = [
    "Ball", "Box", "Polyhedron", "WholeSpace", "project", "resolvent",
    "ModerateScale", "PathBundle", "Problem", "simulate_controlled", "simulate_particles",
    "solve_limit", "backend", "__version__",
]
