"""Deterministic 2D social-navigation simulation and benchmarking engine."""

__version__ = "0.1.0"

from .errors import SocnavError  # noqa: F401
