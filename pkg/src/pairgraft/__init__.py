"""Simulation and decoding toolkit for the pairwise-measurement surface code."""

__version__ = "0.1.0"
