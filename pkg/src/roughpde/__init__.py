"""Numerical toolkit for parabolic equations driven by rough space-time sheets."""
__version__ = "0.1.0"
