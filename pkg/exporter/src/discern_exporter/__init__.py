"""Offline contextual token-embedding exporter.

Runs a pretrained masked language model (BERT-family) over an ingested
corpus and writes per-document token-vector archives in the engine's
binary format, merging subword vectors back onto corpus tokens.
"""

__version__ = "0.1.0"
