"""Unsupervised gaze representation learning via redirection."""

__version__ = "0.1.0"
