"""Detector-output to RFD1 dataset adapter."""

__version__ = "0.1.0"
