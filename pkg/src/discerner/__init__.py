"""Quality classification for online health articles.

Hierarchical GRU encoders with global attention (and a mean-pooled
ablation), a TF-IDF + random-forest baseline, stratified cross-validation,
and confidence-based abstention analysis, all trained per quality
criterion.
"""

__version__ = "0.1.0"
