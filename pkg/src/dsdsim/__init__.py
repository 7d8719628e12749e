"""Doubly-sparse estimation of doubly-selective hybrid mmWave MIMO channels."""

__version__ = "0.1.0"
