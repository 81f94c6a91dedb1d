"""Simulation and numerical-verification lab for rescaled zero-range
dynamics converging to the porous medium equation."""

__version__ = "0.1.0"
