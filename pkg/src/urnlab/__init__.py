"""Simulation and limit-theorem verification for N-urn branching processes."""

__version__ = "0.1.0"
