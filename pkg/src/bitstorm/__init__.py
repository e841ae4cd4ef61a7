"""Instruction-level bit-flip fault injection and vulnerability analytics for toy transformers."""
__version__ = "0.1.0"
