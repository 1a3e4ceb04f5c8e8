"""Indicator-guided automated clustering for unsupervised traffic risk assessment."""

__version__ = "0.1.0"
