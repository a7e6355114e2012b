"""Explaining detected rumours in multi-modal social graphs."""

__version__ = "0.1.0"
