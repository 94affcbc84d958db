"""Morlet-scalogram + residual-network fault diagnosis for vibration signals."""

__version__ = "0.1.0"
