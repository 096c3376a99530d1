"""Sparse motion cues, adapter-conditioned toy motion generation and physical metrics."""

__version__ = "0.1.0"
