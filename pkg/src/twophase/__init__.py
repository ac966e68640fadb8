"""Regularized DDFV / CVFE two-phase Darcy flow solvers."""
