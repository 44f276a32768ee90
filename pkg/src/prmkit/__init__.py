"""Coherence annotation, PRM training-sample construction, and
reranking-based test-time-scaling evaluation."""

__version__ = "0.1.0"
