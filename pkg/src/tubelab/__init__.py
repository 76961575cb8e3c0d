"""Numerical laboratory for x-ray transforms over families of delta-tubes."""

__version__ = "0.1.0"
