"""Investor-sentiment index, classical time-series tests and a TVP-VAR-SV sampler."""
__version__ = "0.1.0"
