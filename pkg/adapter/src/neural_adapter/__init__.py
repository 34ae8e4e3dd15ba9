"""Wire-protocol backend serving transformer models for the augmentation pipeline."""

from .config import AdapterConfig

__version__ = "0.1.0"

__all__ = ["AdapterConfig"]
