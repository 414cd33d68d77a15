"""Numerical experiments on Schroedinger dynamics confined to planar graphs by a steep potential."""

__version__ = "0.1.0"
