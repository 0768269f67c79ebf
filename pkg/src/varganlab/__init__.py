"""VARGAN mode-collapse laboratory."""

__version__ = "0.1.0"
