"""Dependent-condition guidance for diffusion sampling on analytic score models."""

__version__ = "0.1.0"
