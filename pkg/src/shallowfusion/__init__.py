"""Shallow fusion of a character LM into an attention encoder-decoder, at desk scale."""

__version__ = "0.1.0"
