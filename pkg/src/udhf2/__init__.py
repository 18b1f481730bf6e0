"""Frequency-decomposed segmentation / change detection with diffusion refinement."""

__version__ = "0.1.0"
