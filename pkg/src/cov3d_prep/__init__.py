"""Preprocessing, loss and evaluation tools for 3-D COVID-19 CT classification."""

__version__ = "0.1.0"
