"""Genetic-algorithm search over CNN architectures for profiling side-channel attacks."""

__version__ = "0.1.0"
