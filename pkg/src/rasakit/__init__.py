"""Relation-aware sparse attention (RASA) for multi-hop reasoning over knowledge graphs."""

__version__ = "0.1.0"
