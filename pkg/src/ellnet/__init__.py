"""Elliptic PDE solver, perturbation analysis and expression-graph network growth."""
