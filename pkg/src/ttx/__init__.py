"""Text-guided textile pattern generation at desk scale."""

__version__ = "0.1.0"
