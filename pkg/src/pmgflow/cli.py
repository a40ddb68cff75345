"""Console entry point; the actual commands live in harness."""

from .harness import main

__all__ = ["main"]
