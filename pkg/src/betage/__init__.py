"""Robust graph embedding by minimising the empirical moment beta-score."""

__version__ = "0.1.0"
