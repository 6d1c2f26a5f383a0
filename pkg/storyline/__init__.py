"""Skipping recurrent networks for photo-album storylines and summaries."""

__version__ = "1.0.0"
