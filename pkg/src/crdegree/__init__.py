"""Degree counting for the prescribed Webster curvature problem on the CR
three-sphere, with the supporting numerics on the Heisenberg group."""

__version__ = "0.1.0"
