"""Time-frequency tiles, outer Lebesgue norms and sparse bounds on finite periodic signals."""

__version__ = "0.1.0"
