"""Skeleton-based Helmholtz domain decomposition with a nonlocal exchange operator."""

__version__ = "0.1.0"
