"""Sandwich coding toolkit: linear transforms and trained pre/post filters
around a frozen image codec, plus the rate-distortion evaluation suite."""

__version__ = "0.1.0"
