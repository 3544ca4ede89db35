"""Instruction-driven 2D/3D layout synthesis with a masked categorical graph prior and a Gaussian layout decoder."""

__version__ = "0.1.0"
