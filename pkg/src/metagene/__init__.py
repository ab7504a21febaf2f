"""Meta-evolution of geometric neural-network encodings."""

__version__ = "0.1.0"
