"""Mine object tracks from per-frame proposals, discover novel categories and export training examples."""
__version__ = "0.1.0"
