"""Adaptive deterministic and stochastic optimization methods with
runtime verification of their complexity guarantees."""

__version__ = "0.1.0"
