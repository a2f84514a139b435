"""Stochastic gradient Langevin dynamics for quantile, VaR/CVaR and portfolio CVaR problems."""

__version__ = "0.1.0"
