"""Hierarchical multi-label contrastive training for dense retrieval over MeSH labels."""

__version__ = "0.1.0"
