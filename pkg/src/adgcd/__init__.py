"""Across-domain generalized category discovery on precomputed patch features."""

__version__ = "0.1.0"
