"""toonid-adapters: extraction wrappers feeding the recognition engine."""

from .extract import STAGES, ExtractionJob, extract
from .overlays import render_overlays

__all__ = ["STAGES", "ExtractionJob", "extract", "render_overlays"]
