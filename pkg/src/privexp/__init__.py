"""Differentially private Bayesian inference for exponential families."""

__version__ = "0.1.0"
