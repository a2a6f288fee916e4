"""Toolkit for extracting and analyzing categorized visual content from
digitized newspaper pages with METS/ALTO OCR."""

__version__ = "0.1.0"
