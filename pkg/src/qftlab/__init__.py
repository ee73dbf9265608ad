"""Finite-cutoff numerical laboratory for phi^4_3 on cylinders."""
__version__ = "0.1.0"
