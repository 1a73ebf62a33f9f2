"""Manifold-alignment multi-fidelity reduced-order modeling."""

__version__ = "0.1.0"
