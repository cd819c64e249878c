"""Convexification for a coefficient inverse problem with restricted Dirichlet-to-Neumann data."""

__version__ = "0.1.0"
