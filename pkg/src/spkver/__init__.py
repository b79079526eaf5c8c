"""Speaker verification toolkit: embeddings, weight-transfer fine-tuning and cosine scoring."""

__version__ = "0.1.0"
