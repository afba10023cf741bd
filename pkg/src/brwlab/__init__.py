"""Desk-scale laboratory for critical nearest-neighbor branching random walks on Z^d."""

__version__ = "0.1.0"
