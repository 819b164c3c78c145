"""Dual-stream face presentation attack detection with a learnable
DCT frequency-decomposition front end."""

__version__ = "0.1.0"
