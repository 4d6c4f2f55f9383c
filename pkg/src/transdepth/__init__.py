"""Hybrid CNN + Transformer encoder with an attention-gated decoder for monocular depth and normals."""

__version__ = "0.1.0"
