"""Continuous spatio-temporal maps of dynamics (neural SWGMM fields) and
grid-based baselines."""

__version__ = "0.1.0"
