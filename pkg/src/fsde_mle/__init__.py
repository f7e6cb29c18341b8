"""Mittag-Leffler Euler schemes for semilinear fractional SDEs with 1/2 < alpha < 1."""

__version__ = "0.1.0"
