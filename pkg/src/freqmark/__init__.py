"""Fine-tuning-stable watermarks in the frequency components of conv filters."""

__version__ = "0.1.0"
