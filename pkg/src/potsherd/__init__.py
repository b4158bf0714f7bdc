"""Shape-based potsherd identification from fracture outlines."""

__version__ = "0.1.0"
