"""Offline extractor emitting segsplat annotation workspaces."""

from .extract import ExtractorConfig, embed_text, extract_views

__version__ = "0.1.0"
