"""Certified ellipsoidal-cone invariants for loops with affine bodies."""

__version__ = "0.1.0"
