"""Uniform ensemble controllability analysis and open-loop control synthesis."""

__version__ = "0.1.0"
