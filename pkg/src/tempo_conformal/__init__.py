"""Conformal prediction sets for node classification on temporal graphs."""

__version__ = "0.1.0"
