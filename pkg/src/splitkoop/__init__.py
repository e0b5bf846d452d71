"""Koopman operator identification with physics-informed operator splitting."""

__version__ = "0.1.0"
