"""Orthomartingale-coboundary decomposition and approximation toolkit for
stationary random fields on Z^d."""

__version__ = "0.1.0"
