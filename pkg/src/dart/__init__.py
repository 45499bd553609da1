"""Differentiable acoustic radiance transfer: room echograms from meshes and fitted materials."""

__version__ = "0.1.0"
