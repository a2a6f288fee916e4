"""External inference worker: runs detection and embedding models over page
images and hands results to the pipeline as files in its wire formats."""

__version__ = "0.1.0"
