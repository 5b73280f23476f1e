"""Distill black-box tabular models into transparent categorical GLMs."""
__version__ = "0.1.0"
