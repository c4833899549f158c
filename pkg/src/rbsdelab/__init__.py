"""Numerical solvers and verification experiments for reflected BSDEs."""

__version__ = "0.1.0"
