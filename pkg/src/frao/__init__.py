"""Fisher-Rao geometry tools for Bayesian sensitivity and influence analysis."""

__version__ = "0.1.0"
