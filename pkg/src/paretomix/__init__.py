"""Pareto-mixture skew-multivariate copulas for spatial data."""

__version__ = "0.1.0"
