"""Entailment tuning for dense passage retrievers."""

__version__ = "0.1.0"
