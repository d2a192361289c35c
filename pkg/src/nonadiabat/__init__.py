"""Nonadiabatic entropy production for Lindblad dynamics and Kraus maps."""

__version__ = "0.1.0"
