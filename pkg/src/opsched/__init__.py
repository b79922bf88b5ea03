"""Sparsity- and intensity-aware CPU/GPU operator scheduling on a simulated edge device."""

__version__ = "0.1.0"
