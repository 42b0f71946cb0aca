"""Novel-class discovery on precomputed region features."""

__version__ = "0.1.0"
