"""Numerical laboratory for geodesic flows on asymptotically Minkowski
spacetimes and for the Klein-Gordon resolvent on flat spacetime."""

__version__ = "0.1.0"
