"""History-based recommendation as mixture density estimation over item embeddings."""

__version__ = "0.1.0"
