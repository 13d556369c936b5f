"""Strongly typed tensor calculus on chart-based Riemannian manifolds."""

__version__ = "0.1.0"
