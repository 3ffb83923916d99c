# tests/__init__.py
"""
Test suite for Fair GLM.

This package contains unit tests, integration tests, and fixtures
for the dataset, family, penalty, solver, metric and sweep modules.
"""
