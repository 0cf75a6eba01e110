"""Zero-crossing modulation link simulator for 1-bit quantized receivers."""

__version__ = "0.1.0"
