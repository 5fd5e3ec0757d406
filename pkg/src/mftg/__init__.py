"""Solver, simulator and verifier for semi-explicitly solvable mean-field-type games."""

__version__ = "0.1.0"
