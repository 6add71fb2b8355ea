"""Selective Sharing: multi-task training with on-the-fly branch merging."""

__version__ = "1.0.0"
