"""Multimodal graph condensation by structurally-regularized gradient matching."""

__version__ = "0.1.0"
