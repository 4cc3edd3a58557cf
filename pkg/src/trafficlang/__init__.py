"""Encrypted-traffic classification from language-like window features."""

__version__ = "0.1.0"
