"""Cross-lingual alignment of contextual embeddings: anchors, linear and GAN maps, retrieval metrics."""

__version__ = "0.1.0"
