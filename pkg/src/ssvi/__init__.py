"""Sparse-subspace variational inference for small Bayesian neural networks."""

__version__ = "0.1.0"
