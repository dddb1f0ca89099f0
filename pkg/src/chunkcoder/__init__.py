"""chunkcoder: encoder-decoder pipeline for multi-label coding of long documents."""

__version__ = "0.1.0"
