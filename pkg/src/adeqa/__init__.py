"""Cascaded drug / adverse-event extraction: drug recognition, relevance
filtering and span question answering, with cascade-aware evaluation."""

__version__ = "0.1.0"
