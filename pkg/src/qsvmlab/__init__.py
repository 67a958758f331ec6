"""Quantum support vector machines under finite-shot measurement noise."""

__version__ = "0.1.0"
