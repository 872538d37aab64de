"""Diffuse domain method laboratory for 2D elliptic boundary value problems."""

__version__ = "0.1.0"
