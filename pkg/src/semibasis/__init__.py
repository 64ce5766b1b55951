"""Basis-function regression models for option pricing and population dynamics."""

__version__ = "0.1.0"
