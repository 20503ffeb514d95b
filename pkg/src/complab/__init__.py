"""Desk-scale laboratory for data augmentation under model compression."""

__version__ = "0.1.0"
