"""Desk-scale lab for flatness-oriented quantization-aware training."""

__version__ = "0.1.0"
