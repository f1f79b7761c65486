"""Generative vector search.

A conditional flow-matching model generates many candidate embeddings for
a query; retrieval and classification then work from that cloud of
samples rather than from a single query vector.
"""

__version__ = "0.1.0"
