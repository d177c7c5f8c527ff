"""Vectorial Ribaucour transforms of constant-curvature submanifolds, numerically."""

__version__ = "0.1.0"
