"""Gaussian processes, derivative and curvature processes on compact manifolds."""

__version__ = "0.1.0"
