"""Finite-element tools for Signorini thin-obstacle problems and their boundary maps."""

__version__ = "0.1.0"
