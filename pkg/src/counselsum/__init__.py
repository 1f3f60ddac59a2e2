"""Counseling-note generation with a knowledge/structure planning engine."""

__version__ = "0.1.0"
