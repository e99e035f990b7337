"""Dump VLM tap points into vtcompress token bundles."""

from .bundle_writer import write_bundle
from .llava import ExtractionJob, LlavaTap, extract

__all__ = ["ExtractionJob", "LlavaTap", "extract", "write_bundle"]
