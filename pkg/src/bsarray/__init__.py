"""Conditional state engineering of a single optical mode at beam splitter arrays."""

__version__ = "0.1.0"
