"""seedmine: mine domain-specific pre-training data from large text corpora.

Pipeline: ingest and clean raw text, embed chunks into a shared vector
space, index them for approximate nearest-neighbor search, generate
synthetic seed documents per industry domain, mine semantically similar
real documents above a cosine threshold, train a multi-label domain
classifier from the mined labels, and plan domain-weighted data mixes
for continued pre-training.
"""

__version__ = "0.1.0"
