"""GRID - label-noise-robust learning with hybrid discriminative/generative reasoning."""

__version__ = "1.0.0"
