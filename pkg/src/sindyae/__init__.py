"""Autoencoder-based sparse discovery of governing equations from high-dimensional data."""

__version__ = "0.1.0"
