"""Sparse distributed estimation over heterogeneous zero-attracting diffusion networks."""

__version__ = "0.1.0"
