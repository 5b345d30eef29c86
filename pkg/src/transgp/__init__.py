"""Covariance parameter estimation for transformed Gaussian random fields."""

__version__ = "0.1.0"
