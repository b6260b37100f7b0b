"""Desk-scale laboratory for texture-vs-shape bias in small convolutional nets."""

__version__ = "0.1.0"
