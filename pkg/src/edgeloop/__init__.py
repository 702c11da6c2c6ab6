"""Transparent pub-sub runtime for edge-cloud pipelines."""

__version__ = "0.1.0"
