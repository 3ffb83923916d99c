# src/__init__.py
"""Fair GLM - fair generalized linear models and accuracy/disparity sweeps."""

__version__ = "0.1.0"
