"""Inexact interior point-proximal method of multipliers for sparse LP/QP."""

__version__ = "0.1.0"
