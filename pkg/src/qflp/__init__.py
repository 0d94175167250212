"""Queue-aware capacitated p-median facility location."""

__version__ = "0.1.0"
