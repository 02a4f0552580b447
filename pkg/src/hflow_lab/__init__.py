"""Numerical laboratory for the homogeneous flow of a parallelizable manifold."""

__version__ = "0.1.0"
