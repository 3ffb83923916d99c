# tests/integration/__init__.py
"""Integration tests for Fair GLM sweeps."""
