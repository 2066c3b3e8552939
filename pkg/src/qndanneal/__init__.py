"""Exact-diagonalization simulator for quantum annealing with a QND-like meter coupling."""

__version__ = "0.1.0"
