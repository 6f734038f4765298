"""Noise-mitigated quantum distance estimation for data-driven truss solvers."""

__version__ = "0.1.0"
