"""Numerical homogenization of monotone operators with Musielak-Orlicz growth."""

__version__ = "0.1.0"
